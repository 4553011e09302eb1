//! Convex body averages against their John ellipsoids.

use dyadlab::convexbody::{convex_body_avg, john_basis, john_ellipsoid, outer_factor, Zonotope};
use dyadlab::dyadic::{MeasurePreset, MeasuredTree};
use dyadlab::function::LeafFunction;
use dyadlab::linalg::{dot, norm};
use dyadlab::seed::rng;
use proptest::prelude::*;
use rand::Rng;

fn random_f(tree: &MeasuredTree, d: usize, r: &mut impl Rng) -> LeafFunction {
    // values in a random subspace keep some bodies degenerate
    let rank = r.gen_range(1..=d);
    let dirs: Vec<Vec<f64>> = (0..rank)
        .map(|_| (0..d).map(|_| r.gen_range(-1.0..1.0)).collect())
        .collect();
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

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    /// A vector controlled coordinatewise in the John basis lies in A·d times the body.
    #[test]
    fn john_coordinates_control_membership(seed in any::<u64>(), d in 1usize..=3, a in 0.1f64..4.0) {
        let mut r = rng(seed);
        let tree = MeasuredTree::build(1, 5, &MeasurePreset::RandomBalanced { bound: 8.0, seed }).unwrap();
        let f = random_f(&tree, d, &mut r);
        let q = tree.leaf_ancestor(r.gen_range(0..tree.num_leaves()), r.gen_range(0..=4));
        let z = convex_body_avg(&tree, &f, &q);
        let (basis, _) = john_basis(&z, 1e-6);
        let mass = tree.leaf_masses();
        let mut v = vec![0.0; d];
        for e in &basis {
            let avg = tree.leaf_range(&q).map(|x| dot(f.at(x), e).abs() * mass[x]).sum::<f64>() / tree.mu(&q);
            let c = a * avg * r.gen_range(-1.0..=1.0);
            for (vi, ei) in v.iter_mut().zip(e) {
                *vi += c * ei;
            }
        }
        let m = z.scaled(a * d as f64).member(&v).unwrap();
        prop_assert!(m.member, "residual {}", m.residual);
    }
}

#[test]
fn sandwich_with_64_generators() {
    let mut r = rng(64);
    for d in 2..=4 {
        for _ in 0..5 {
            let gens: Vec<Vec<f64>> = (0..64)
                .map(|_| (0..d).map(|_| r.gen_range(-1.0..1.0)).collect())
                .collect();
            let z = Zonotope::new(d, &gens).unwrap();
            let e = john_ellipsoid(&z, 1e-6);
            assert_eq!(e.rank(), d);
            for _ in 0..200 {
                let x: Vec<f64> = (0..d).map(|_| r.gen_range(-1.0..1.0)).collect();
                let n = norm(&x);
                let p = e.point(&x.iter().map(|c| c / n).collect::<Vec<_>>());
                assert!(z.member(&p).unwrap().member);
            }
            let outer = outer_factor(&z, &e, 40, &mut r);
            assert!(outer <= (d as f64).sqrt() * (1.0 + 1e-5), "d={d}: {outer}");
        }
    }
}
