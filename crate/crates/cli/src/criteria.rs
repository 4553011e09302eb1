//! The acceptance experiments. Each takes its instance counts from the
//! operation's parameter table and derives one seed per instance from the
//! master seed, so any instance can be replayed alone.

use crate::config::Params;
use crate::error::{CliError, CliResult};
use crate::fixtures::CuratedInstance;
use crate::report::{Outcome, Table, Tally};
use dyadlab::carleson::{
    classical_carleson, embedding_constant_c1, expanding_sum_check, verify_embedding_bounds,
    C1Method, CarlesonData, WeightFamily,
};
use dyadlab::convexbody::{convex_body_avg, john_basis, john_ellipsoid, outer_factor, Zonotope};
use dyadlab::dyadic::{CubeId, MeasurePreset, MeasuredTree};
use dyadlab::function::LeafFunction;
use dyadlab::haar::{build_haar_1d, build_haar_nd, xi, HaarSystem, SplitSpec};
use dyadlab::linalg::{dot, norm};
use dyadlab::orlicz::{bp_check, dual_young, maximal_depth_sweep, norm_on, YoungFunction};
use dyadlab::seed::{derive, rng, Rng as SeedRng};
use dyadlab::shifts::{
    cz_decompose, random_shift, random_test_function, CoefficientLaw, MartingaleMultiplier,
};
use dyadlab::sparse::{
    build_sparse_balanced, build_sparse_l1, build_sparse_multiplier, pointwise_form_check,
    SparseFamily, SparseOptions,
};
use dyadlab::weights::{
    ap_constant, apb_constant, apn_constant, expectation_band, necessity_experiment, pairs_within,
    random_weight, two_weight_norm_l2, WeightPreset, WeightedOperator,
};
use rand::Rng;
use rayon::prelude::*;
use std::path::{Path, PathBuf};
use std::sync::Arc;

/// Everything an experiment needs besides its own parameters.
pub struct Context<'a> {
    pub seed: u64,
    pub params: &'a toml::Table,
    /// Directory against which relative paths in parameters resolve.
    pub base_dir: &'a Path,
}

impl Context<'_> {
    fn rng(&self, stream: &str, i: usize) -> SeedRng {
        rng(derive(self.seed, stream, i as u64))
    }

    fn path(&self, p: &str) -> PathBuf {
        let p = Path::new(p);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }
}

pub struct Experiment {
    pub id: &'static str,
    pub title: &'static str,
    pub run: fn(&Context<'_>) -> CliResult<Outcome>,
}

pub const EXPERIMENTS: &[Experiment] = &[
    Experiment {
        id: "haar_validity",
        title: "Haar system validity on mixed measures",
        run: haar_validity,
    },
    Experiment {
        id: "balanced_chain",
        title: "Balanced characterization at finite depth",
        run: balanced_chain,
    },
    Experiment {
        id: "convex_geometry",
        title: "Zonotope membership, support and John sandwich",
        run: convex_geometry,
    },
    Experiment {
        id: "sparse_balanced",
        title: "Convex body domination, balanced regime",
        run: sparse_balanced,
    },
    Experiment {
        id: "sparse_l1",
        title: "Convex body domination, L1-normalized regime",
        run: sparse_l1,
    },
    Experiment {
        id: "sparse_multiplier",
        title: "Martingale multipliers on non-doubling measures",
        run: sparse_multiplier,
    },
    Experiment {
        id: "carleson_embedding",
        title: "Generalized Carleson embedding bounds",
        run: carleson_embedding,
    },
    Experiment {
        id: "weighted_multiplier",
        title: "Matrix-weighted multiplier norms at p = 2",
        run: weighted_multiplier,
    },
    Experiment {
        id: "necessity",
        title: "Necessity of the A2 Haar characteristic",
        run: necessity,
    },
    Experiment {
        id: "inequality_fuzz",
        title: "Inequality fuzz and CZ decomposition invariants",
        run: inequality_fuzz,
    },
    Experiment {
        id: "orlicz_sweep",
        title: "Orlicz maximal operator depth sweep",
        run: orlicz_sweep,
    },
];

pub fn find(id: &str) -> Option<&'static Experiment> {
    EXPERIMENTS.iter().find(|e| e.id == id)
}

fn core<T>(r: dyadlab::Result<T>) -> CliResult<T> {
    r.map_err(CliError::from)
}

fn haar(tree: Arc<MeasuredTree>) -> CliResult<Arc<HaarSystem>> {
    let hs = if tree.n() == 1 {
        build_haar_1d(tree)?
    } else {
        build_haar_nd(tree, &SplitSpec::default())?
    };
    Ok(Arc::new(hs))
}

/// Runs `f` over instance indices on the current pool, keeping index order.
fn instances<T: Send>(
    n: usize,
    f: impl Fn(usize) -> CliResult<T> + Sync + Send,
) -> CliResult<Vec<T>> {
    (0..n).into_par_iter().map(f).collect()
}

fn merge_all<T>(items: &[T], tally: impl Fn(&T) -> &Tally) -> Tally {
    let mut t = Tally::default();
    for it in items {
        t.merge(tally(it));
    }
    t
}

// ---------------------------------------------------------------- haar

struct HaarInstance {
    tally: Tally,
    gram: f64,
    xi00: f64,
    max_m_ratio: f64,
    min_product: f64,
}

fn mixed_preset(kind: usize, r: &mut impl Rng) -> MeasurePreset {
    match kind % 4 {
        0 => MeasurePreset::Lebesgue,
        1 => MeasurePreset::RandomBalanced {
            bound: r.gen_range(2.0..8.0),
            seed: r.gen(),
        },
        2 => MeasurePreset::CantorLike {
            ratio: r.gen_range(0.02..0.3),
        },
        _ => MeasurePreset::ExponentialImbalanced {
            ratio: r.gen_range(1.2..3.0),
        },
    }
}

fn haar_validity(ctx: &Context<'_>) -> CliResult<Outcome> {
    let p = Params::new(ctx.params, &["measures"])?;
    let n = p.usize("measures", 100)?;
    let items = instances(n, |i| {
        let mut r = ctx.rng("haar_validity", i);
        let dim = 1 + i % 2;
        let depth = if dim == 1 {
            r.gen_range(4..=8)
        } else {
            r.gen_range(2..=4)
        };
        let preset = mixed_preset(i / 2, &mut r);
        let tree = Arc::new(MeasuredTree::build(dim, depth, &preset)?);
        let hs = haar(tree.clone())?;
        let mut tally = Tally::default();
        let gram = hs.gram_deviation();
        tally
            .get("gram", "max |⟨h_P, h_Q⟩ − δ_PQ| ≤ 1e-9", 0.0)
            .le(i, gram, 1e-9);
        let xi00 = core(xi(&hs, 0, 0))?;
        let (mut max_m_ratio, mut min_product) = (0.0f64, f64::INFINITY);
        for q in tree.cubes().filter(|q| !tree.is_leaf(q)) {
            let m = hs.m(&q);
            tally
                .get("m_le_mu", "m(Q) ≤ μ(Q) up to rounding", 1e-14)
                .le(i, m, tree.mu(&q));
            max_m_ratio = max_m_ratio.max(m / tree.mu(&q));
            if !hs.is_nonzero(&q) {
                continue;
            }
            let prod = hs.linf(&q) * m.sqrt();
            min_product = min_product.min(prod);
            tally
                .get("linf_lower", "1 ≤ ‖h_Q‖∞ √m(Q)", 1e-12)
                .le(i, 1.0, prod);
            tally
                .get("linf_upper", "‖h_Q‖∞ √m(Q) ≤ Ξ[0,0]", 1e-12)
                .le(i, prod, xi00);
        }
        Ok(HaarInstance {
            tally,
            gram,
            xi00,
            max_m_ratio,
            min_product,
        })
    })?;
    let mut out = Outcome::new("haar_validity", "");
    out.instances = n;
    for (i, it) in items.iter().enumerate() {
        out.row(i, "gram_deviation", it.gram);
        out.row(i, "xi00", it.xi00);
        out.row(i, "max_m_over_mu", it.max_m_ratio);
        out.row(i, "min_linf_sqrt_m", it.min_product);
    }
    let tally = merge_all(&items, |it| &it.tally);
    out.measured.insert(
        "max_gram_deviation".into(),
        items.iter().map(|i| i.gram).fold(0.0, f64::max),
    );
    Ok(out.finish(tally))
}

// ---------------------------------------------------------------- balanced chain

fn balanced_chain(ctx: &Context<'_>) -> CliResult<Outcome> {
    let p = Params::new(ctx.params, &["trees", "ratios", "depth", "sweep_depth"])?;
    let n = p.usize("trees", 20)?;
    let ratios = p.f64_list("ratios", &[1.5, 2.0, 3.0, 4.0, 6.0])?;
    let depth = p.usize("depth", 8)? as u32;
    // sibling masses differ by ratio^(2^(L−1)); beyond depth 5 that leaves double range
    let sweep_depth = p.usize("sweep_depth", 4)? as u32;
    let items = instances(n, |i| {
        let mut r = ctx.rng("balanced_chain", i);
        let (dim, d) = if i % 2 == 0 {
            (1, depth)
        } else {
            (2, depth.div_ceil(2).min(4))
        };
        let preset = MeasurePreset::RandomBalanced {
            bound: r.gen_range(2.0..6.0),
            seed: r.gen(),
        };
        let tree = Arc::new(MeasuredTree::build(dim, d, &preset)?);
        let hs = haar(tree.clone())?;
        let (x10, x01) = (core(xi(&hs, 1, 0))?, core(xi(&hs, 0, 1))?);
        let mut tally = Tally::default();
        for q in tree.cubes() {
            let Some(parent) = tree.parent(&q) else {
                continue;
            };
            if tree.is_leaf(&q) || !hs.is_nonzero(&q) || !hs.is_nonzero(&parent) {
                continue;
            }
            let ratio = (hs.m(&parent) / hs.m(&q)).sqrt();
            tally
                .get("chain_lower", "Ξ[0,1]⁻¹ ≤ √(m(Q̂)/m(Q))", 1e-12)
                .le(i, 1.0 / x01, ratio);
            tally
                .get("chain_upper", "√(m(Q̂)/m(Q)) ≤ Ξ[1,0]", 1e-12)
                .le(i, ratio, x10);
        }
        Ok((tally, x10, x01))
    })?;
    let mut out = Outcome::new("balanced_chain", "");
    out.instances = n + ratios.len();
    let mut tally = Tally::default();
    for (i, (t, x10, x01)) in items.iter().enumerate() {
        tally.merge(t);
        out.row(format!("balanced_{i}"), "xi10", *x10);
        out.row(format!("balanced_{i}"), "xi01", *x01);
    }
    let sweep = ratios
        .par_iter()
        .map(|&ratio| {
            let tree = Arc::new(MeasuredTree::build(
                1,
                sweep_depth,
                &MeasurePreset::ExponentialImbalanced { ratio },
            )?);
            let hs = haar(tree)?;
            Ok((ratio, core(xi(&hs, 1, 0))?, core(xi(&hs, 0, 1))?))
        })
        .collect::<CliResult<Vec<_>>>()?;
    let mut table = Table {
        name: "imbalance_sweep".into(),
        columns: vec![
            "ratio".into(),
            "xi10".into(),
            "xi01".into(),
            "product".into(),
        ],
        rows: vec![],
    };
    for (k, &(ratio, x10, x01)) in sweep.iter().enumerate() {
        table.rows.push(vec![ratio, x10, x01, x10 * x01]);
        out.row(format!("ratio_{ratio}"), "xi10_xi01", x10 * x01);
        if k > 0 {
            let prev = sweep[k - 1].1 * sweep[k - 1].2;
            tally
                .get(
                    "sweep_increasing",
                    "Ξ[1,0]Ξ[0,1] strictly increasing in the ratio",
                    0.0,
                )
                .lt(k, prev, x10 * x01);
        }
    }
    if sweep.len() < 2 {
        tally
            .get(
                "sweep_increasing",
                "Ξ[1,0]Ξ[0,1] strictly increasing in the ratio",
                0.0,
            )
            .truth(0, false);
        out.notes
            .push("the imbalance sweep needs at least two ratios".into());
    }
    out.table(table);
    Ok(out.finish(tally))
}

// ---------------------------------------------------------------- convex geometry

fn random_vec(d: usize, r: &mut impl Rng) -> Vec<f64> {
    (0..d).map(|_| r.gen_range(-1.0..1.0)).collect()
}

fn unit(d: usize, r: &mut impl Rng) -> Vec<f64> {
    loop {
        let v = random_vec(d, r);
        let n = norm(&v);
        if n > 1e-3 {
            return v.iter().map(|x| x / n).collect();
        }
    }
}

/// Leaf function with values in a random subspace, so some bodies are degenerate.
fn subspace_function(tree: &MeasuredTree, d: usize, r: &mut impl Rng) -> LeafFunction {
    let rank = r.gen_range(1..=d);
    let dirs: Vec<Vec<f64>> = (0..rank).map(|_| random_vec(d, r)).collect();
    let mut f = LeafFunction::zeros(tree.num_leaves(), d);
    for x in 0..tree.num_leaves() {
        for dir in &dirs {
            let w = r.gen_range(-2.0..2.0);
            for (fi, di) in f.at_mut(x).iter_mut().zip(dir) {
                *fi += w * di;
            }
        }
    }
    f
}

fn random_zonotope(i: usize, r: &mut impl Rng) -> CliResult<Zonotope> {
    let d = 1 + i % 3;
    if i % 2 == 0 {
        let k = r.gen_range(1..=24);
        let gens: Vec<Vec<f64>> = (0..k).map(|_| random_vec(d, r)).collect();
        Ok(Zonotope::new(d, &gens)?)
    } else {
        let tree = MeasuredTree::build(
            1,
            5,
            &MeasurePreset::RandomBalanced {
                bound: 6.0,
                seed: r.gen(),
            },
        )?;
        let f = subspace_function(&tree, d, r);
        let q = tree.leaf_ancestor(r.gen_range(0..tree.num_leaves()), r.gen_range(0..=4));
        Ok(convex_body_avg(&tree, &f, &q))
    }
}

fn convex_geometry(ctx: &Context<'_>) -> CliResult<Outcome> {
    let p = Params::new(
        ctx.params,
        &["zonotopes", "constructed", "directions", "points"],
    )?;
    let n = p.usize("zonotopes", 200)?;
    let m = p.usize("constructed", 500)?;
    let dirs = p.usize("directions", 16)?;
    let pts = p.usize("points", 8)?;
    let bodies = instances(n, |i| {
        let mut r = ctx.rng("zonotope", i);
        let z = random_zonotope(i, &mut r)?;
        let d = z.d();
        let scale: f64 = z.generators().map(norm).sum::<f64>().max(1e-300);
        let mut tally = Tally::default();
        for _ in 0..dirs {
            let u = unit(d, &mut r);
            let h = z.support(&u)?;
            let v = z.vertex(&u);
            tally
                .get("support_vertex", "|h(u) − u·v(u)| ≤ 1e-9 scale", 0.0)
                .le(i, (h - dot(&u, &v)).abs(), 1e-9 * scale);
            tally
                .get("vertex_member", "v(u) ∈ Z", 0.0)
                .truth(i, z.member(&v)?.member);
            if h > 1e-6 * scale {
                let out: Vec<f64> = v.iter().map(|x| 1.001 * x).collect();
                tally
                    .get("pushed_vertex_outside", "1.001 v(u) ∉ Z", 0.0)
                    .truth(i, !z.member(&out)?.member);
            }
        }
        let probes: Vec<Vec<f64>> = (0..dirs).map(|_| unit(d, &mut r)).collect();
        let rb = z.radius_bound();
        for _ in 0..pts {
            let x: Vec<f64> = random_vec(d, &mut r).iter().map(|c| c * rb).collect();
            let mem = z.member(&x)?;
            let mut consistent = true;
            if mem.member {
                for u in &probes {
                    consistent &= dot(u, &x) <= z.support(u)? + 1e-9 * scale;
                }
            } else {
                consistent = match &mem.separating {
                    Some(u) => dot(u, &x) > z.support(u)? - 1e-9 * scale * norm(u),
                    None => false,
                };
            }
            tally
                .get(
                    "membership_support",
                    "membership agrees with support functions",
                    0.0,
                )
                .truth(i, consistent);
        }
        let e = john_ellipsoid(&z, 1e-6);
        let rank = e.rank();
        if rank > 0 {
            for _ in 0..dirs {
                let x = unit(rank, &mut r);
                tally
                    .get("john_inner", "ℰ ⊂ Z on sampled boundary points", 0.0)
                    .truth(i, z.member(&e.point(&x))?.member);
            }
            let outer = outer_factor(&z, &e, 40, &mut r);
            tally.get("john_outer", "Z ⊂ √r(1+1e-5) ℰ", 0.0).le(
                i,
                outer,
                (rank as f64).sqrt() * (1.0 + 1e-5),
            );
            Ok((tally, outer / (rank as f64).sqrt()))
        } else {
            Ok((tally, 0.0))
        }
    })?;
    let constructed = instances(m, |i| {
        let mut r = ctx.rng("constructed", i);
        let d = 1 + i % 3;
        let tree = MeasuredTree::build(
            1,
            5,
            &MeasurePreset::RandomBalanced {
                bound: 8.0,
                seed: r.gen(),
            },
        )?;
        let f = subspace_function(&tree, d, &mut r);
        let q = tree.leaf_ancestor(r.gen_range(0..tree.num_leaves()), r.gen_range(0..=4));
        let a = r.gen_range(0.1..4.0);
        let z = convex_body_avg(&tree, &f, &q);
        let (basis, _) = john_basis(&z, 1e-6);
        let mass = tree.leaf_masses();
        let mut v = vec![0.0; d];
        for e in &basis {
            let avg = tree
                .leaf_range(&q)
                .map(|x| dot(f.at(x), e).abs() * mass[x])
                .sum::<f64>()
                / tree.mu(&q);
            let c = a * avg * r.gen_range(-1.0..=1.0);
            for (vi, ei) in v.iter_mut().zip(e) {
                *vi += c * ei;
            }
        }
        let mem = z.scaled(a * d as f64).member(&v)?;
        let mut tally = Tally::default();
        tally
            .get("constructed_member", "v ∈ A·d·⟨⟨f⟩⟩_Q", 0.0)
            .truth(i, mem.member);
        tally
            .get("constructed_residual", "LP residual ≤ 1e-9", 0.0)
            .le(i, mem.residual, 1e-9);
        Ok((tally, mem.residual))
    })?;
    let mut out = Outcome::new("convex_geometry", "");
    out.instances = n + m;
    let mut tally = merge_all(&bodies, |b| &b.0);
    tally.merge(&merge_all(&constructed, |c| &c.0));
    for (i, (_, ratio)) in bodies.iter().enumerate() {
        out.row(i, "outer_over_sqrt_rank", *ratio);
    }
    out.measured.insert(
        "max_outer_over_sqrt_rank".into(),
        bodies.iter().map(|b| b.1).fold(0.0, f64::max),
    );
    out.measured.insert(
        "max_constructed_residual".into(),
        constructed.iter().map(|c| c.1).fold(0.0, f64::max),
    );
    Ok(out.finish(tally))
}

// ---------------------------------------------------------------- sparse

struct SparseInstance {
    tally: Tally,
    c: f64,
    eta: f64,
    size: usize,
    complexity: (u32, u32),
    error: Option<String>,
}

fn sparse_row(out: &mut Outcome, i: usize, it: &SparseInstance) {
    out.row(i, "C", it.c);
    out.row(i, "eta", it.eta);
    out.row(i, "family_size", it.size as f64);
    out.row(i, "s", it.complexity.0 as f64);
    out.row(i, "t", it.complexity.1 as f64);
}

fn failed_instance(name: &str, i: usize, complexity: (u32, u32), e: CliError) -> SparseInstance {
    let mut tally = Tally::default();
    tally
        .get(name, "certificate passes at the auto-searched C", 0.0)
        .truth(i, false);
    SparseInstance {
        tally,
        c: f64::NAN,
        eta: 0.0,
        size: 0,
        complexity,
        error: Some(format!("instance {i}: {e}")),
    }
}

fn sparse_balanced(ctx: &Context<'_>) -> CliResult<Outcome> {
    let p = Params::new(ctx.params, &["instances", "fixtures", "min_fixtures"])?;
    let n = p.usize("instances", 50)?;
    let fixtures = p.string("fixtures", "fixtures")?;
    let min_fixtures = p.usize("min_fixtures", 3)?;
    const COMPLEXITIES: [(u32, u32); 6] = [(0, 0), (0, 1), (1, 0), (1, 1), (0, 2), (2, 0)];
    let items = instances(n, |i| {
        let (s, t) = COMPLEXITIES[i % COMPLEXITIES.len()];
        let run = || -> CliResult<SparseInstance> {
            let mut r = ctx.rng("sparse_balanced", i);
            // in 2D the bound is a child-weight spread, and the half-space Haar
            // system loses balance quickly as it grows
            let (dim, depth, bound) = if i % 5 == 4 {
                (2, 3, r.gen_range(1.05..1.5))
            } else {
                (1, r.gen_range(4..=6), r.gen_range(2.0..4.0))
            };
            let preset = MeasurePreset::RandomBalanced {
                bound,
                seed: r.gen(),
            };
            let tree = Arc::new(MeasuredTree::build(dim, depth, &preset)?);
            let hs = haar(tree.clone())?;
            let shift = random_shift(hs, s, t, CoefficientLaw::Uniform, &mut r)?;
            let f = random_test_function(&tree, r.gen_range(1..=3), &mut r);
            let build = build_sparse_balanced(&shift, &f, &tree.root(), &SparseOptions::default())?;
            let mut tally = Tally::default();
            tally
                .get(
                    "certificate",
                    "certificate passes at the auto-searched C",
                    0.0,
                )
                .truth(i, build.certificate.passed());
            tally
                .get("eta", "η ≥ 0.1", 0.0)
                .le(i, 0.1, build.sparseness.eta_achieved);
            Ok(SparseInstance {
                tally,
                c: build.c,
                eta: build.sparseness.eta_achieved,
                size: build.family.len(),
                complexity: (s, t),
                error: None,
            })
        };
        Ok(run().unwrap_or_else(|e| failed_instance("certificate", i, (s, t), e)))
    })?;
    let mut out = Outcome::new("sparse_balanced", "");
    out.instances = n;
    let mut tally = merge_all(&items, |it| &it.tally);
    for (i, it) in items.iter().enumerate() {
        sparse_row(&mut out, i, it);
        out.notes.extend(it.error.clone());
    }
    out.measured.insert(
        "max_C".into(),
        items
            .iter()
            .map(|i| i.c)
            .filter(|c| c.is_finite())
            .fold(0.0, f64::max),
    );
    out.measured.insert(
        "min_eta".into(),
        items.iter().map(|i| i.eta).fold(f64::INFINITY, f64::min),
    );

    let dir = ctx.path(&fixtures);
    let mut paths: Vec<PathBuf> = std::fs::read_dir(&dir)
        .map_err(|e| CliError::io(&dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    let verdicts = paths
        .par_iter()
        .map(|p| CuratedInstance::load(p)?.check())
        .collect::<CliResult<Vec<_>>>()?;
    let mut separating = 0;
    for (k, v) in verdicts.iter().enumerate() {
        tally
            .get(
                "fixture_modified",
                "curated: modified certificate passes",
                0.0,
            )
            .truth(k, v.modified_passes);
        tally
            .get(
                "fixture_plain_fails",
                "curated: plain certificate fails at 10·C",
                0.0,
            )
            .truth(k, v.plain_fails_at_10c);
        if v.modified_passes && v.plain_fails_at_10c {
            separating += 1;
        }
        out.row(&v.name, "C", v.c);
        out.row(
            &v.name,
            "plain_leaves_failing_at_10C",
            v.plain_leaves_failing as f64,
        );
    }
    tally
        .get(
            "fixture_count",
            "at least `min_fixtures` separating curated instances",
            0.0,
        )
        .le(0, min_fixtures as f64, separating as f64);
    out.measured
        .insert("separating_fixtures".into(), separating as f64);
    Ok(out.finish(tally))
}

/// Least-squares slope of y against x.
pub fn slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    if sxx > 0.0 {
        sxy / sxx
    } else {
        0.0
    }
}

fn sparse_l1(ctx: &Context<'_>) -> CliResult<Outcome> {
    let p = Params::new(ctx.params, &["instances", "max_slope"])?;
    let n = p.usize("instances", 50)?;
    let max_slope = p.f64("max_slope", 1.25)?;
    const COMPLEXITIES: [(u32, u32); 5] = [(0, 0), (1, 0), (1, 1), (2, 1), (2, 2)];
    let items = instances(n, |i| {
        let (s, t) = COMPLEXITIES[i % COMPLEXITIES.len()];
        let run = || -> CliResult<SparseInstance> {
            let mut r = ctx.rng("sparse_l1", i);
            let preset = match (i / COMPLEXITIES.len()) % 3 {
                0 => MeasurePreset::RandomBalanced {
                    bound: r.gen_range(2.0..8.0),
                    seed: r.gen(),
                },
                1 => MeasurePreset::CantorLike {
                    ratio: r.gen_range(0.02..0.2),
                },
                _ => MeasurePreset::ExponentialImbalanced {
                    ratio: r.gen_range(2.0..6.0),
                },
            };
            let (dim, depth) = if i % 7 == 6 {
                (2, 3)
            } else {
                (1, r.gen_range(5..=6))
            };
            let tree = Arc::new(MeasuredTree::build(dim, depth, &preset)?);
            let hs = haar(tree.clone())?;
            let mut shift = random_shift(hs, s, t, CoefficientLaw::Uniform, &mut r)?;
            shift.normalize_l1(1.0);
            let f = random_test_function(&tree, r.gen_range(1..=3), &mut r);
            let build = build_sparse_l1(&shift, &f, &tree.root(), &SparseOptions::default())?;
            let mut tally = Tally::default();
            tally
                .get(
                    "certificate",
                    "certificate passes at the auto-searched C",
                    0.0,
                )
                .truth(i, build.certificate.passed());
            Ok(SparseInstance {
                tally,
                c: build.c,
                eta: build.sparseness.eta_achieved,
                size: build.family.len(),
                complexity: (s, t),
                error: None,
            })
        };
        Ok(run().unwrap_or_else(|e| failed_instance("certificate", i, (s, t), e)))
    })?;
    let mut out = Outcome::new("sparse_l1", "");
    out.instances = n;
    let mut tally = merge_all(&items, |it| &it.tally);
    for (i, it) in items.iter().enumerate() {
        sparse_row(&mut out, i, it);
        out.notes.extend(it.error.clone());
    }
    // geometric mean of C per complexity against log(1 + s + t)
    let mut table = Table {
        name: "complexity".into(),
        columns: vec![
            "s".into(),
            "t".into(),
            "instances".into(),
            "geomean_C".into(),
            "max_C".into(),
        ],
        rows: vec![],
    };
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for &(s, t) in &COMPLEXITIES {
        let cs: Vec<f64> = items
            .iter()
            .filter(|it| it.complexity == (s, t) && it.c.is_finite())
            .map(|it| it.c)
            .collect();
        if cs.is_empty() {
            continue;
        }
        let gm = (cs.iter().map(|c| c.ln()).sum::<f64>() / cs.len() as f64).exp();
        table.rows.push(vec![
            s as f64,
            t as f64,
            cs.len() as f64,
            gm,
            cs.iter().cloned().fold(0.0, f64::max),
        ]);
        xs.push((1.0 + (s + t) as f64).ln());
        ys.push(gm.ln());
    }
    let fitted = if xs.len() >= 2 { slope(&xs, &ys) } else { 0.0 };
    tally
        .get(
            "growth_slope",
            "slope of log C against log(1+s+t) ≤ max_slope",
            0.0,
        )
        .le(0, fitted, max_slope);
    out.measured.insert("growth_slope".into(), fitted);
    out.measured.insert(
        "max_C".into(),
        items
            .iter()
            .map(|i| i.c)
            .filter(|c| c.is_finite())
            .fold(0.0, f64::max),
    );
    out.table(table);
    Ok(out.finish(tally))
}

fn sparse_multiplier(ctx: &Context<'_>) -> CliResult<Outcome> {
    let p = Params::new(ctx.params, &["instances"])?;
    let n = p.usize("instances", 50)?;
    let items = instances(n, |i| {
        let run = || -> CliResult<SparseInstance> {
            let mut r = ctx.rng("sparse_multiplier", i);
            let preset = if i % 2 == 0 {
                MeasurePreset::CantorLike {
                    ratio: r.gen_range(0.01..0.2),
                }
            } else {
                MeasurePreset::ExponentialImbalanced {
                    ratio: r.gen_range(3.0..8.0),
                }
            };
            let (dim, depth) = if i % 5 == 4 {
                (2, 3)
            } else {
                (1, r.gen_range(5..=8))
            };
            let tree = MeasuredTree::build(dim, depth, &preset)?;
            let sigma = MartingaleMultiplier::random(&tree, &mut r);
            let f = random_test_function(&tree, r.gen_range(1..=3), &mut r);
            let build = build_sparse_multiplier(
                &tree,
                &sigma,
                &f,
                &tree.root(),
                &SparseOptions::default(),
            )?;
            let mut tally = Tally::default();
            tally
                .get(
                    "certificate",
                    "certificate passes at the auto-searched C",
                    0.0,
                )
                .truth(i, build.certificate.passed());
            tally
                .get("eta", "η ≥ 0.4", 0.0)
                .le(i, 0.4, build.sparseness.eta_achieved);
            Ok(SparseInstance {
                tally,
                c: build.c,
                eta: build.sparseness.eta_achieved,
                size: build.family.len(),
                complexity: (0, 0),
                error: None,
            })
        };
        Ok(run().unwrap_or_else(|e| failed_instance("certificate", i, (0, 0), e)))
    })?;
    let mut out = Outcome::new("sparse_multiplier", "");
    out.instances = n;
    let tally = merge_all(&items, |it| &it.tally);
    for (i, it) in items.iter().enumerate() {
        out.row(i, "C", it.c);
        out.row(i, "eta", it.eta);
        out.row(i, "family_size", it.size as f64);
        out.notes.extend(it.error.clone());
    }
    out.measured.insert(
        "min_eta".into(),
        items.iter().map(|i| i.eta).fold(f64::INFINITY, f64::min),
    );
    Ok(out.finish(tally))
}

// ---------------------------------------------------------------- carleson

fn lognormal_weights(n: usize, spread: f64, r: &mut impl Rng) -> Vec<f64> {
    (0..n)
        .map(|_| (spread * r.gen_range(-1.0..1.0f64)).exp())
        .collect()
}

fn carleson_tree(r: &mut impl Rng) -> CliResult<MeasuredTree> {
    let depth = r.gen_range(3..=6);
    let preset = match r.gen_range(0..3) {
        0 => MeasurePreset::RandomBalanced {
            bound: r.gen_range(2.0..8.0),
            seed: r.gen(),
        },
        1 => MeasurePreset::CantorLike {
            ratio: r.gen_range(0.05..0.4),
        },
        _ => MeasurePreset::Lebesgue,
    };
    Ok(MeasuredTree::build(1, depth, &preset)?)
}

fn carleson_data(tree: &MeasuredTree, r: &mut impl Rng) -> CarlesonData {
    if r.gen_bool(0.5) {
        CarlesonData::random_sparse(tree, r.gen_range(0.1..0.8), r)
    } else {
        CarlesonData::random_dense(tree, r)
    }
}

#[derive(Clone, Copy, PartialEq)]
enum FamilyKind {
    Constant,
    Matrix,
    Adversarial,
}

struct CarlesonInstance {
    tally: Tally,
    kind: FamilyKind,
    p: f64,
    a: f64,
    c1: f64,
    c2: f64,
    upper_ratio: f64,
}

fn carleson_instance(
    ctx: &Context<'_>,
    stream: &str,
    i: usize,
    p: f64,
    kinds: &[FamilyKind],
) -> CliResult<CarlesonInstance> {
    let mut r = ctx.rng(stream, i);
    let tree = carleson_tree(&mut r)?;
    let kind = kinds[i % kinds.len()];
    let base = lognormal_weights(tree.num_leaves(), r.gen_range(0.5..4.0), &mut r);
    let fam = match kind {
        FamilyKind::Constant => WeightFamily::constant(&tree, &base)?,
        FamilyKind::Matrix => {
            let preset = if r.gen_bool(0.5) {
                WeightPreset::Independent {
                    kappa_max: r.gen_range(5.0..200.0),
                }
            } else {
                WeightPreset::PathSmooth {
                    kappa_max: r.gen_range(5.0..200.0),
                    step: r.gen_range(0.2..1.0),
                }
            };
            let w = random_weight(&tree, r.gen_range(1..=3), &preset, &mut r);
            WeightFamily::from_matrix_weight(&tree, &w, p)?
        }
        FamilyKind::Adversarial => {
            WeightFamily::adversarial(&tree, &base, r.gen_range(0.2..3.0), &mut r)?
        }
    };
    let data = carleson_data(&tree, &mut r);
    let rep = verify_embedding_bounds(&tree, &fam, &data, p, derive(ctx.seed, "ascent", i as u64))?;
    let mut tally = Tally::default();
    if p == 2.0 {
        tally
            .get("lower_p2", "A⁻¹C₂ ≤ C₁ (exact C₁, p = 2)", 1e-9)
            .le(i, rep.c2 / rep.a, rep.c1);
    }
    if kind == FamilyKind::Constant {
        let cl = classical_carleson(&tree, &base, &data, p)?;
        tally
            .get(
                "classical_testing",
                "constant family: C₂ matches the classical testing constant to 1e-10",
                0.0,
            )
            .le(
                i,
                (rep.c2 - cl.testing).abs(),
                1e-10 * cl.testing.max(1e-300),
            );
        if let Some(e) = cl.embedding {
            let c1 = embedding_constant_c1(&tree, &fam, &data, p, C1Method::Exact)?.value;
            tally
                .get(
                    "classical_embedding",
                    "constant family: C₁ matches the classical embedding constant to 1e-10",
                    0.0,
                )
                .le(i, (c1 - e).abs(), 1e-10 * e.max(1e-300));
        }
    }
    Ok(CarlesonInstance {
        tally,
        kind,
        p,
        a: rep.a,
        c1: rep.c1,
        c2: rep.c2,
        upper_ratio: rep.upper_ratio,
    })
}

fn carleson_embedding(ctx: &Context<'_>) -> CliResult<Outcome> {
    let p = Params::new(
        ctx.params,
        &["families", "other_families", "other_p", "kappa_ceiling"],
    )?;
    let n = p.usize("families", 200)?;
    let m = p.usize("other_families", 40)?;
    let other_p = p.f64_list("other_p", &[1.5, 3.0])?;
    let ceiling = p.f64("kappa_ceiling", 16.0)?;
    use FamilyKind::*;
    let main = instances(n, |i| {
        carleson_instance(ctx, "carleson_p2", i, 2.0, &[Constant, Matrix, Adversarial])
    })?;
    let kappa = main.iter().map(|it| it.upper_ratio).fold(0.0, f64::max);
    let mut others = Vec::new();
    for (k, &q) in other_p.iter().enumerate() {
        others.extend(instances(m, |i| {
            carleson_instance(
                ctx,
                &format!("carleson_p{k}"),
                i,
                q,
                &[Constant, Adversarial],
            )
        })?);
    }
    let mut out = Outcome::new("carleson_embedding", "");
    out.instances = n + others.len();
    let mut tally = merge_all(&main, |it| &it.tally);
    tally.merge(&merge_all(&others, |it| &it.tally));
    tally
        .get("kappa_ceiling", "C₁ ≤ κ A^{3/2} C₂ with κ ≤ ceiling", 0.0)
        .le(0, kappa, ceiling);
    for (i, it) in others.iter().enumerate() {
        tally
            .get(
                "ascent_below_upper",
                "p ≠ 2: ascent C₁ ≤ κ A^{1+1/p'} C₂",
                1e-9,
            )
            .le(i, it.upper_ratio, kappa);
    }
    let mut table = Table {
        name: "families".into(),
        columns: vec![
            "p".into(),
            "kind".into(),
            "A".into(),
            "C2".into(),
            "C1".into(),
            "upper_ratio".into(),
        ],
        rows: vec![],
    };
    for (i, it) in main.iter().chain(&others).enumerate() {
        let kind = match it.kind {
            Constant => 0.0,
            Matrix => 1.0,
            Adversarial => 2.0,
        };
        table
            .rows
            .push(vec![it.p, kind, it.a, it.c2, it.c1, it.upper_ratio]);
        out.row(i, "upper_ratio", it.upper_ratio);
    }
    out.notes
        .push("kind column: 0 constant, 1 matrix-induced, 2 adversarial".into());
    out.measured.insert("kappa.carleson_upper".into(), kappa);
    out.table(table);
    Ok(out.finish(tally))
}

// ---------------------------------------------------------------- weights

fn weight_preset(r: &mut impl Rng) -> WeightPreset {
    if r.gen_bool(0.5) {
        WeightPreset::Independent {
            kappa_max: r.gen_range(2.0..200.0),
        }
    } else {
        WeightPreset::PathSmooth {
            kappa_max: r.gen_range(2.0..200.0),
            step: r.gen_range(0.2..1.5),
        }
    }
}

fn weighted_multiplier(ctx: &Context<'_>) -> CliResult<Outcome> {
    let p = Params::new(ctx.params, &["instances", "cubes"])?;
    let n = p.usize("instances", 100)?;
    let cubes = p.usize("cubes", 4)?;
    let items = instances(n, |i| {
        let mut r = ctx.rng("weighted_multiplier", i);
        let depth = r.gen_range(3..=5);
        let preset = if r.gen_bool(0.5) {
            MeasurePreset::RandomBalanced {
                bound: r.gen_range(2.0..8.0),
                seed: r.gen(),
            }
        } else {
            MeasurePreset::CantorLike {
                ratio: r.gen_range(0.05..0.4),
            }
        };
        let tree = MeasuredTree::build(1, depth, &preset)?;
        let d = 1 + i % 3;
        let w = random_weight(&tree, d, &weight_preset(&mut r), &mut r);
        let sigma = MartingaleMultiplier::random(&tree, &mut r);
        let norm = two_weight_norm_l2(&tree, &WeightedOperator::Multiplier(&sigma), &w, &w)?;
        let a2 = ap_constant(&tree, &w, 2.0)?.value;
        let mut tally = Tally::default();
        let all: Vec<CubeId> = tree.cubes().collect();
        for _ in 0..cubes {
            let q = all[r.gen_range(0..all.len())];
            let band = expectation_band(&tree, &w, &q)?;
            tally.get("band_lower", "A₂ term / d ≤ ‖𝔼_Q‖²", 1e-9).le(
                i,
                band.ap_term / d as f64,
                band.norm_sq,
            );
            tally.get("band_upper", "‖𝔼_Q‖² ≤ d · A₂ term", 1e-9).le(
                i,
                band.norm_sq,
                d as f64 * band.ap_term,
            );
        }
        Ok((tally, d, a2, norm))
    })?;
    let mut out = Outcome::new("weighted_multiplier", "");
    out.instances = n;
    let tally = merge_all(&items, |it| &it.0);
    let mut table = Table {
        name: "scatter".into(),
        columns: vec![
            "instance".into(),
            "d".into(),
            "A2".into(),
            "norm".into(),
            "ratio".into(),
        ],
        rows: vec![],
    };
    let mut kappa: f64 = 0.0;
    for (i, &(_, d, a2, nrm)) in items.iter().enumerate() {
        let ratio = nrm / a2.powf(1.5);
        kappa = kappa.max(ratio);
        table.rows.push(vec![i as f64, d as f64, a2, nrm, ratio]);
        out.row(i, "A2", a2);
        out.row(i, "norm", nrm);
    }
    out.measured.insert("kappa.multiplier_a2".into(), kappa);
    out.table(table);
    Ok(out.finish(tally))
}

fn necessity(ctx: &Context<'_>) -> CliResult<Outcome> {
    let p = Params::new(ctx.params, &["weights", "pairs_per_weight"])?;
    let n = p.usize("weights", 20)?;
    let per = p.usize("pairs_per_weight", 5)?;
    let items = instances(n, |i| {
        let mut r = ctx.rng("necessity", i);
        let preset = MeasurePreset::RandomBalanced {
            bound: r.gen_range(2.0..6.0),
            seed: r.gen(),
        };
        let tree = Arc::new(MeasuredTree::build(1, r.gen_range(4..=5), &preset)?);
        let hs = haar(tree.clone())?;
        let big_n = 1 + (i % 2) as u32;
        let w = random_weight(&tree, 1 + i % 3, &weight_preset(&mut r), &mut r);
        let apb = apb_constant(&hs, &w, 2.0)?.value;
        let apn = apn_constant(&hs, &w, 2.0, big_n)?.value;
        let mut tally = Tally::default();
        tally
            .get("apb_le_apn", "[W]_{A₂^b} ≤ [W]_{A₂^N}", 0.0)
            .le(i, apb, apn);
        let pairs: Vec<_> = pairs_within(&tree, big_n + 2)
            .into_iter()
            .filter(|(j, k)| j.level > 0 && k.level > 0 && !tree.is_leaf(j) && !tree.is_leaf(k))
            .collect();
        let mut ratios = Vec::new();
        for _ in 0..per {
            let (j, k) = pairs[r.gen_range(0..pairs.len())];
            let rep = necessity_experiment(&hs, &w, 2.0, big_n, &j, &k, None, &mut r)?;
            ratios.push(rep.ratio);
        }
        Ok((tally, big_n, apb, apn, ratios))
    })?;
    let mut out = Outcome::new("necessity", "");
    out.instances = n * per;
    let tally = merge_all(&items, |it| &it.0);
    let mut kappa: f64 = 0.0;
    for (i, (_, big_n, apb, apn, ratios)) in items.iter().enumerate() {
        out.row(i, "N", *big_n as f64);
        out.row(i, "apb", *apb);
        out.row(i, "apn", *apn);
        for (k, r) in ratios.iter().enumerate() {
            out.row(format!("{i}.{k}"), "ratio", *r);
            kappa = kappa.max(*r);
        }
    }
    out.measured.insert("kappa.necessity".into(), kappa);
    Ok(out.finish(tally))
}

// ---------------------------------------------------------------- fuzz

fn inequality_fuzz(ctx: &Context<'_>) -> CliResult<Outcome> {
    let p = Params::new(
        ctx.params,
        &["expanding", "pointwise", "holder", "cz", "chunk"],
    )?;
    let n_exp = p.usize("expanding", 10_000)?;
    let n_pw = p.usize("pointwise", 10_000)?;
    let n_hold = p.usize("holder", 10_000)?;
    let n_cz = p.usize("cz", 1000)?;
    let chunk = p.usize("chunk", 250)?.max(1);
    // instances are grouped into chunks so the pool sees few, larger tasks
    let chunked = |n: usize,
                   f: &(dyn Fn(usize, &mut Tally) -> CliResult<f64> + Sync)|
     -> CliResult<(Tally, f64)> {
        let parts = instances(n.div_ceil(chunk), |c| {
            let mut t = Tally::default();
            let mut worst: f64 = 0.0;
            for i in c * chunk..((c + 1) * chunk).min(n) {
                worst = worst.max(f(i, &mut t)?);
            }
            Ok((t, worst))
        })?;
        let tally = merge_all(&parts, |p| &p.0);
        Ok((tally, parts.iter().map(|p| p.1).fold(0.0, f64::max)))
    };
    let (t_exp, _) = chunked(n_exp, &|i, t| {
        let mut r = ctx.rng("expanding", i);
        let len = r.gen_range(1..=10);
        let a: Vec<f64> = (0..len)
            .map(|_| {
                if r.gen_bool(0.2) {
                    0.0
                } else {
                    r.gen_range(0.0..1.0f64).powi(3)
                }
            })
            .collect();
        let p = r.gen_range(1.0001..=3.5);
        let rep = expanding_sum_check(&a, p)?;
        t.get("expanding_sum", "(Σa)^p ≤ expanded sum", 1e-12)
            .le(i, rep.lhs, rep.rhs);
        Ok(0.0)
    })?;
    let (t_pw, _) = chunked(n_pw, &|i, t| {
        let mut r = ctx.rng("pointwise", i);
        let tree = MeasuredTree::build(
            1,
            r.gen_range(2..=4),
            &mixed_preset(r.gen_range(0..4), &mut r),
        )?;
        let fam = SparseFamily::new(tree.cubes().filter(|_| r.gen_bool(0.4)));
        let d = r.gen_range(1..=3);
        let f = subspace_function(&tree, d, &mut r);
        let g = subspace_function(&tree, d, &mut r);
        let rep = pointwise_form_check(&tree, &fam, &f, &g)?;
        t.get("pointwise_to_form", "∫ h_{⟨⟨f⟩⟩}(g) ≤ sparse form", 0.0)
            .truth(i, rep.holds);
        Ok(0.0)
    })?;
    let phis = [
        YoungFunction::power(2.0),
        YoungFunction::power(1.5),
        YoungFunction::power_log(2.0, 1.0),
        YoungFunction::power_log(1.5, -0.5),
    ];
    let duals: Vec<YoungFunction> = phis.iter().map(dual_young).collect();
    let (t_hold, _) = chunked(n_hold, &|i, t| {
        let mut r = ctx.rng("holder", i);
        let k = i % phis.len();
        let len = r.gen_range(1..=16);
        let masses: Vec<f64> = (0..len).map(|_| r.gen_range(0.01..1.0)).collect();
        let total: f64 = masses.iter().sum();
        let f: Vec<f64> = (0..len)
            .map(|_| r.gen_range(0.0..1.0f64).powi(3) * 10f64.powf(r.gen_range(-2.0..2.0)))
            .collect();
        let g: Vec<f64> = (0..len)
            .map(|_| r.gen_range(0.0..1.0f64).powi(3) * 10f64.powf(r.gen_range(-2.0..2.0)))
            .collect();
        let lhs = f
            .iter()
            .zip(&g)
            .zip(&masses)
            .map(|((a, b), m)| a * b * m)
            .sum::<f64>()
            / total;
        let rhs =
            2.0 * norm_on(&phis[k], &f, &masses, total) * norm_on(&duals[k], &g, &masses, total);
        t.get("holder", "⟨fg⟩ ≤ 2‖f‖_Φ ‖g‖_Φ̃", 1e-9).le(i, lhs, rhs);
        Ok(0.0)
    })?;
    let (t_cz, cz_kappa) = chunked(n_cz, &|i, t| {
        let mut r = ctx.rng("cz", i);
        let tree = MeasuredTree::build(
            1,
            r.gen_range(3..=7),
            &mixed_preset(r.gen_range(0..4), &mut r),
        )?;
        let f = random_test_function(&tree, 1, &mut r);
        let avg = f.l1_norm(&tree) / tree.mu(&tree.root());
        let lambda = avg * r.gen_range(0.5..8.0);
        let cz = cz_decompose(&tree, &f, lambda)?;
        let mass = tree.leaf_masses();
        t.get("cz_reconstruction", "|f − (g + b)| ≤ 1e-12 max|f|", 0.0)
            .le(i, cz.reconstruction_error, 1e-12 * f.max_abs().max(1.0));
        for (k, part) in cz.b_parts.iter().enumerate() {
            let b = cz.b_part(&tree, &f, k);
            let s: f64 = tree
                .leaf_range(&part.parent)
                .map(|x| b.at(x)[0] * mass[x])
                .sum();
            t.get("cz_mean_zero", "|∫ b_k| ≤ 1e-12 ‖b_k‖₁", 0.0).le(
                i,
                s.abs(),
                1e-12 * part.l1.max(1e-300),
            );
            let abs: f64 = tree
                .leaf_range(&part.cube)
                .map(|x| f.at(x)[0].abs() * mass[x])
                .sum();
            t.get("cz_stopping", "⟨|f|⟩_{Q_k} > λ", 0.0)
                .lt(i, lambda, abs / tree.mu(&part.cube));
        }
        Ok(cz.kappa)
    })?;
    let mut out = Outcome::new("inequality_fuzz", "");
    out.instances = n_exp + n_pw + n_hold + n_cz;
    let mut tally = t_exp;
    tally.merge(&t_pw);
    tally.merge(&t_hold);
    tally.merge(&t_cz);
    out.measured.insert("kappa.cz_bad_mass".into(), cz_kappa);
    Ok(out.finish(tally))
}

// ---------------------------------------------------------------- orlicz

fn orlicz_sweep(ctx: &Context<'_>) -> CliResult<Outcome> {
    let p = Params::new(
        ctx.params,
        &[
            "stable",
            "divergent",
            "informational",
            "p",
            "depths",
            "trials",
            "measure",
        ],
    )?;
    let stable = p.string_list("stable", &["power:r=1.2", "power_log:p=2,s=-2"])?;
    let divergent = p.string_list("divergent", &["power:r=2"])?;
    let info = p.string_list("informational", &[])?;
    let exponent = p.f64("p", 2.0)?;
    let depths: Vec<u32> = p
        .f64_list("depths", &[4.0, 5.0, 6.0, 7.0, 8.0])?
        .iter()
        .map(|d| *d as u32)
        .collect();
    let trials = p.usize("trials", 200)?;
    let measure = p.string("measure", "random-balanced:bound=2,seed=11")?;
    let fine_depth = depths.iter().copied().max().unwrap_or(0);
    let fine = MeasuredTree::build(1, fine_depth, &MeasurePreset::parse(&measure)?)?;
    let all: Vec<(String, usize)> = stable
        .iter()
        .map(|s| (s.clone(), 0))
        .chain(divergent.iter().map(|s| (s.clone(), 1)))
        .chain(info.iter().map(|s| (s.clone(), 2)))
        .collect();
    let sweeps = all
        .par_iter()
        .map(|(spec, role)| {
            let phi = YoungFunction::parse(spec)?;
            let sweep = maximal_depth_sweep(
                &fine,
                &phi,
                exponent,
                &depths,
                trials,
                derive(ctx.seed, "orlicz", 0),
            )?;
            let bp = bp_check(&phi, exponent)?;
            Ok((spec.clone(), *role, sweep, bp))
        })
        .collect::<CliResult<Vec<_>>>()?;
    let mut out = Outcome::new("orlicz_sweep", "");
    out.instances = sweeps.len() * depths.len() * trials;
    let mut tally = Tally::default();
    let mut columns = vec!["depth".to_string()];
    columns.extend(sweeps.iter().map(|s| s.0.clone()));
    let mut table = Table {
        name: "depth_sweep".into(),
        columns,
        rows: vec![],
    };
    for (k, &d) in depths.iter().enumerate() {
        let mut row = vec![d as f64];
        row.extend(sweeps.iter().map(|s| s.2.points[k].ratio));
        table.rows.push(row);
    }
    for (i, (spec, role, sweep, bp)) in sweeps.iter().enumerate() {
        for pt in &sweep.points {
            out.row(spec, &format!("ratio_depth_{}", pt.depth), pt.ratio);
        }
        let first = sweep.points.first().map_or(0.0, |s| s.ratio);
        let spread = sweep
            .points
            .iter()
            .map(|s| (s.ratio / first - 1.0).abs())
            .fold(0.0, f64::max);
        out.measured.insert(format!("spread.{spec}"), spread);
        match role {
            0 => {
                tally
                    .get("bp_presets_finite", "B_p holds for the stable presets", 0.0)
                    .truth(i, bp.analytic.unwrap_or(bp.finite));
                tally
                    .get(
                        "stable",
                        "ratio within ±10% of depth 4 across the sweep",
                        0.0,
                    )
                    .le(i, spread, 0.1);
            }
            1 => {
                tally
                    .get(
                        "bp_divergent_infinite",
                        "B_p fails for the divergent presets",
                        0.0,
                    )
                    .truth(i, !bp.analytic.unwrap_or(bp.finite));
                tally
                    .get(
                        "divergent_trend",
                        "ratio increases with depth and ends >10% higher",
                        0.0,
                    )
                    .truth(i, sweep.divergent_trend);
            }
            _ => out.notes.push(format!(
                "{spec}: spread {spread:.4}, B_p {}",
                bp.analytic.unwrap_or(bp.finite)
            )),
        }
    }
    out.table(table);
    Ok(out.finish(tally))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ctx(table: &toml::Table) -> Context<'_> {
        Context {
            seed: 3,
            params: table,
            base_dir: Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/../../config")),
        }
    }

    fn small(pairs: &[(&str, i64)]) -> toml::Table {
        pairs
            .iter()
            .map(|(k, v)| (k.to_string(), toml::Value::Integer(*v)))
            .collect()
    }

    #[test]
    fn slope_of_a_line() {
        assert!((slope(&[0.0, 1.0, 2.0], &[1.0, 3.0, 5.0]) - 2.0).abs() < 1e-12);
        assert_eq!(slope(&[1.0, 1.0], &[0.0, 5.0]), 0.0);
    }

    #[test]
    fn experiment_ids_are_unique() {
        for (i, a) in EXPERIMENTS.iter().enumerate() {
            assert!(EXPERIMENTS[i + 1..].iter().all(|b| b.id != a.id));
        }
    }

    #[test]
    fn small_runs_pass() {
        let cases: &[(&str, &[(&str, i64)])] = &[
            ("haar_validity", &[("measures", 6)]),
            ("balanced_chain", &[("trees", 2)]),
            ("convex_geometry", &[("zonotopes", 6), ("constructed", 6)]),
            ("sparse_multiplier", &[("instances", 3)]),
            ("weighted_multiplier", &[("instances", 3)]),
            ("necessity", &[("weights", 2)]),
            (
                "inequality_fuzz",
                &[
                    ("expanding", 50),
                    ("pointwise", 50),
                    ("holder", 50),
                    ("cz", 20),
                ],
            ),
        ];
        for (id, params) in cases {
            let table = small(params);
            let out = (find(id).unwrap().run)(&ctx(&table)).unwrap();
            assert!(out.passed, "{id}: {:#?}", out.checks);
            assert!(!out.checks.is_empty());
        }
    }

    #[test]
    fn unknown_parameter_is_a_config_error() {
        let table = small(&[("bogus", 1)]);
        let err = haar_validity(&ctx(&table)).err().unwrap();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn runs_are_deterministic() {
        let table = small(&[("measures", 4)]);
        let a = haar_validity(&ctx(&table)).unwrap();
        let b = haar_validity(&ctx(&table)).unwrap();
        assert_eq!(a, b);
    }
}
