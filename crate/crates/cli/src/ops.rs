//! Single-instance operations built from the config's tree, Haar, shift and
//! weight sections. The subcommands and the suite share these builders.

use crate::config::{
    parse_law, parse_weight_preset, ExperimentConfig, HaarSpec, Params, ShiftSpec, TreeSpec,
    WeightSpec,
};
use crate::error::{CliError, CliResult};
use crate::report::{Outcome, Tally};
use dyadlab::dyadic::{MeasurePreset, MeasuredTree};
use dyadlab::function::LeafFunction;
use dyadlab::haar::{build_haar_1d, build_haar_nd, check_balanced, HaarSystem, SplitSpec};
use dyadlab::seed::{derive, rng};
use dyadlab::shifts::{random_shift, random_test_function, HaarShift};
use dyadlab::sparse::{build_sparse_balanced, build_sparse_l1, SparseOptions};
use dyadlab::weights::{ap_constant, random_weight, MatrixWeight};
use std::sync::Arc;

pub fn build_tree(spec: &TreeSpec) -> CliResult<Arc<MeasuredTree>> {
    let preset = MeasurePreset::parse(&spec.measure)?;
    Ok(Arc::new(MeasuredTree::build(spec.n, spec.depth, &preset)?))
}

pub fn build_haar(tree: Arc<MeasuredTree>, spec: &HaarSpec) -> CliResult<Arc<HaarSystem>> {
    let hs = if tree.n() == 1 {
        build_haar_1d(tree)?
    } else {
        if spec.axis >= tree.n() {
            return Err(CliError::Config(format!(
                "split axis {} out of range for n = {}",
                spec.axis,
                tree.n()
            )));
        }
        build_haar_nd(tree, &SplitSpec::HalfSpace { axis: spec.axis })?
    };
    Ok(Arc::new(hs))
}

/// Random shift from the `[shift]` section, seeded from the master seed.
pub fn build_shift(hs: Arc<HaarSystem>, spec: &ShiftSpec, seed: u64) -> CliResult<HaarShift> {
    let mut r = rng(derive(seed, "shift", 0));
    let mut t = random_shift(hs, spec.s, spec.t, parse_law(&spec.law)?, &mut r)?;
    if let Some(c) = spec.l1_normalize {
        t.normalize_l1(c);
    }
    Ok(t)
}

pub fn build_function(tree: &MeasuredTree, d: usize, seed: u64) -> LeafFunction {
    random_test_function(tree, d.max(1), &mut rng(derive(seed, "function", 0)))
}

pub fn build_weight(tree: &MeasuredTree, spec: &WeightSpec, seed: u64) -> CliResult<MatrixWeight> {
    if spec.d == 0 {
        return Err(CliError::Config("weight dimension d must be ≥ 1".into()));
    }
    let preset = parse_weight_preset(&spec.preset)?;
    Ok(random_weight(
        tree,
        spec.d,
        &preset,
        &mut rng(derive(seed, "weight", 0)),
    ))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SuiteOp {
    HaarCheck,
    SparseBuild,
    WeightsAp,
}

impl SuiteOp {
    pub const IDS: &'static [&'static str] = &["haar_check", "sparse_build", "weights_ap"];

    pub fn parse(id: &str) -> Option<Self> {
        match id {
            "haar_check" => Some(SuiteOp::HaarCheck),
            "sparse_build" => Some(SuiteOp::SparseBuild),
            "weights_ap" => Some(SuiteOp::WeightsAp),
            _ => None,
        }
    }

    pub fn run(self, cfg: &ExperimentConfig, params: &toml::Table) -> CliResult<Outcome> {
        let tree = build_tree(&cfg.tree)?;
        let mut tally = Tally::default();
        let out = match self {
            SuiteOp::HaarCheck => {
                let p = Params::new(params, &["bound"])?;
                let bound = p.f64("bound", 8.0)?;
                let hs = build_haar(tree, &cfg.haar)?;
                let rep = check_balanced(&hs, bound)?;
                let mut out = Outcome::new("haar_check", "Haar system of the configured tree");
                let gram = hs.gram_deviation();
                tally
                    .get("gram", "Gram deviation ≤ 1e-9", 0.0)
                    .le(0, gram, 1e-9);
                out.measured.insert("gram_deviation".into(), gram);
                out.measured.insert("xi00".into(), rep.xi00);
                out.measured.insert("xi10".into(), rep.xi10);
                out.measured.insert("xi01".into(), rep.xi01);
                out.measured
                    .insert("balanced".into(), if rep.is_balanced { 1.0 } else { 0.0 });
                out
            }
            SuiteOp::SparseBuild => {
                let p = Params::new(params, &["regime"])?;
                let regime = p.string("regime", "balanced")?;
                let hs = build_haar(tree.clone(), &cfg.haar)?;
                let shift = build_shift(hs, &cfg.shift, cfg.seed)?;
                let f = build_function(&tree, cfg.shift.d, cfg.seed);
                let opts = SparseOptions::default();
                let build = match regime.as_str() {
                    "balanced" => build_sparse_balanced(&shift, &f, &tree.root(), &opts)?,
                    "l1" => build_sparse_l1(&shift, &f, &tree.root(), &opts)?,
                    other => return Err(CliError::Config(format!("unknown regime '{other}'"))),
                };
                let mut out = Outcome::new(
                    "sparse_build",
                    "Sparse certificate for the configured shift",
                );
                tally
                    .get("certificate", "certificate passes", 0.0)
                    .truth(0, build.certificate.passed());
                out.measured.insert("C".into(), build.c);
                out.measured
                    .insert("eta".into(), build.sparseness.eta_achieved);
                out.measured
                    .insert("family_size".into(), build.family.len() as f64);
                out
            }
            SuiteOp::WeightsAp => {
                Params::new(params, &[])?;
                let w = build_weight(&tree, &cfg.weight, cfg.seed)?;
                let rep = ap_constant(&tree, &w, cfg.weight.p)?;
                let mut out =
                    Outcome::new("weights_ap", "A_p characteristic of the configured weight");
                out.measured.insert("ap".into(), rep.value);
                out
            }
        };
        let mut out = out.finish(tally);
        out.instances = 1;
        Ok(out)
    }
}
