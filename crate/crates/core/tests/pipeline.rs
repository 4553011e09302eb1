//! End-to-end runs across modules on small trees.

use dyadlab::carleson::{verify_embedding_bounds, CarlesonData, WeightFamily};
use dyadlab::dyadic::{MeasurePreset, MeasuredTree};
use dyadlab::haar::{build_haar_1d, build_haar_nd, check_balanced, SplitSpec};
use dyadlab::seed::rng;
use dyadlab::shifts::{
    cz_decompose, random_shift, random_test_function, CoefficientLaw, MartingaleMultiplier,
};
use dyadlab::sparse::{
    build_sparse_balanced, build_sparse_l1, build_sparse_multiplier, verify_sparseness,
    SparseOptions,
};
use dyadlab::weights::{random_weight, WeightPreset};
use rand::Rng;
use std::sync::Arc;

#[test]
fn balanced_shift_to_certificate() {
    for seed in 0..4 {
        let tree = Arc::new(
            MeasuredTree::build(1, 5, &MeasurePreset::RandomBalanced { bound: 4.0, seed }).unwrap(),
        );
        let hs = Arc::new(build_haar_1d(tree.clone()).unwrap());
        assert!(check_balanced(&hs, 8.0).unwrap().is_balanced);
        let mut r = rng(seed);
        let t = random_shift(hs.clone(), 1, 1, CoefficientLaw::Uniform, &mut r).unwrap();
        let f = random_test_function(&tree, 2, &mut r);
        let build = build_sparse_balanced(&t, &f, &tree.root(), &SparseOptions::default()).unwrap();
        assert!(build.certificate.passed());
        assert!(verify_sparseness(&tree, &build.family).eta_achieved >= 0.1);
    }
}

#[test]
fn l1_shift_on_two_dimensional_tree() {
    let tree = Arc::new(
        MeasuredTree::build(2, 3, &MeasurePreset::ExponentialImbalanced { ratio: 4.0 }).unwrap(),
    );
    let hs = Arc::new(build_haar_nd(tree.clone(), &SplitSpec::default()).unwrap());
    let mut r = rng(9);
    let mut t = random_shift(hs, 0, 1, CoefficientLaw::Uniform, &mut r).unwrap();
    t.normalize_l1(1.0);
    let f = random_test_function(&tree, 1, &mut r);
    let build = build_sparse_l1(&t, &f, &tree.root(), &SparseOptions::default()).unwrap();
    assert!(build.certificate.passed());
}

#[test]
fn multiplier_on_cantor_measure() {
    let tree = MeasuredTree::build(1, 6, &MeasurePreset::CantorLike { ratio: 0.05 }).unwrap();
    let mut r = rng(3);
    let sigma = MartingaleMultiplier::random(&tree, &mut r);
    let f = random_test_function(&tree, 2, &mut r);
    let build = build_sparse_multiplier(&tree, &sigma, &f, &tree.root(), &SparseOptions::default())
        .unwrap();
    assert!(build.certificate.passed());
    assert!(build.sparseness.eta_achieved >= 0.4);
}

#[test]
fn carleson_from_matrix_weight() {
    let tree = MeasuredTree::build(
        1,
        4,
        &MeasurePreset::RandomBalanced {
            bound: 4.0,
            seed: 5,
        },
    )
    .unwrap();
    let mut r = rng(5);
    let w = random_weight(
        &tree,
        3,
        &WeightPreset::PathSmooth {
            kappa_max: 50.0,
            step: 0.5,
        },
        &mut r,
    );
    let fam = WeightFamily::from_matrix_weight(&tree, &w, 2.0).unwrap();
    let data = CarlesonData::random_sparse(&tree, 0.4, &mut r);
    let rep = verify_embedding_bounds(&tree, &fam, &data, 2.0, 0).unwrap();
    assert!(rep.lower_ok && rep.upper_ratio <= 16.0, "{rep:?}");
}

#[test]
fn cz_invariants() {
    let tree = MeasuredTree::build(
        1,
        6,
        &MeasurePreset::RandomBalanced {
            bound: 4.0,
            seed: 2,
        },
    )
    .unwrap();
    let mut r = rng(2);
    for _ in 0..20 {
        let f = random_test_function(&tree, 1, &mut r);
        let avg = f.l1_norm(&tree) / tree.mu(&tree.root());
        let lambda = avg * r.gen_range(0.5..8.0);
        let cz = cz_decompose(&tree, &f, lambda).unwrap();
        assert!(cz.reconstruction_error <= 1e-12 * f.max_abs().max(1.0));
        for (k, part) in cz.b_parts.iter().enumerate() {
            assert!(part.mean_error <= 1e-12);
            let b = cz.b_part(&tree, &f, k);
            let s: f64 = tree
                .leaf_range(&part.parent)
                .map(|x| b.at(x)[0] * tree.leaf_masses()[x])
                .sum();
            assert!(s.abs() <= 1e-12 * part.l1.max(1e-300));
            let abs: f64 = tree
                .leaf_range(&part.cube)
                .map(|x| f.at(x)[0].abs() * tree.leaf_masses()[x])
                .sum();
            assert!(abs / tree.mu(&part.cube) > lambda);
        }
    }
}
