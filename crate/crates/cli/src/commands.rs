//! Command-line surface: argument types and one handler per subcommand.

use crate::config::{parse_law, parse_weight_preset, ExperimentConfig, HaarSpec};
use crate::error::{CliError, CliResult};
use crate::ops::build_haar;
use crate::report::{flatten_json, rows_to_csv, write_file};
use crate::suite::{run_suite, SuiteOptions};
use clap::{Args, Parser, Subcommand, ValueEnum};
use dyadlab::carleson::{verify_embedding_bounds, CarlesonData, WeightFamily};
use dyadlab::convexbody::{john_ellipsoid, outer_factor, Zonotope};
use dyadlab::dyadic::{CubeId, MeasureFile, MeasurePreset, MeasuredTree};
use dyadlab::function::LeafFunction;
use dyadlab::haar::{check_balanced, HaarSystem};
use dyadlab::orlicz::{bp_check, bump_constant, maximal_depth_sweep, YoungFunction};
use dyadlab::seed::{derive, rng, Rng as SeedRng};
use dyadlab::shifts::{
    apply_shift, is_l1_normalized, random_shift, random_test_function, weak_type_experiment,
    HaarShift, MartingaleMultiplier, WeakOperator,
};
use dyadlab::sparse::{
    build_sparse_balanced, build_sparse_l1, build_sparse_multiplier, SparseOptions,
};
use dyadlab::weights::{
    ap_constant, ap_infty_sc, apb_constant, apn_constant, necessity_experiment, pairs_within,
    random_weight, weighted_operator_norm, MatrixWeight, MatrixWeightFile, WeightedOperator,
};
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use std::path::{Path, PathBuf};
use std::sync::Arc;

#[derive(Parser, Debug)]
#[command(
    name = "dyadlab",
    version,
    about = "Finite-depth verification lab for nonhomogeneous dyadic analysis"
)]
pub struct Cli {
    /// Master seed; every random object derives its own seed from it.
    #[arg(long, global = true, default_value_t = 1)]
    pub seed: u64,
    /// Worker threads (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    pub jobs: usize,
    /// Directory for output files.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Build a measured tree and print it with summary statistics.
    Tree(TreeArgs),
    #[command(subcommand)]
    Haar(HaarCmd),
    #[command(subcommand)]
    Shift(ShiftCmd),
    #[command(subcommand)]
    Body(BodyCmd),
    #[command(subcommand)]
    Sparse(SparseCmd),
    #[command(subcommand)]
    Weights(WeightsCmd),
    #[command(subcommand)]
    Carleson(CarlesonCmd),
    #[command(subcommand)]
    Orlicz(OrliczCmd),
    /// Run a TOML experiment configuration.
    Suite(SuiteArgs),
}

#[derive(Args, Debug, Clone)]
pub struct TreeArgs {
    /// Spatial dimension n.
    #[arg(long, default_value_t = 1)]
    pub dim: usize,
    #[arg(long, default_value_t = 5)]
    pub depth: u32,
    /// Measure preset, e.g. `random-balanced:bound=4,seed=1`.
    #[arg(long, default_value = "lebesgue")]
    pub measure: String,
    /// Measure file `{n, L, leaf_masses}`; overrides the preset.
    #[arg(long)]
    pub tree: Option<PathBuf>,
    /// Haar split axis for n ≥ 2.
    #[arg(long, default_value_t = 0)]
    pub axis: usize,
}

#[derive(Args, Debug, Clone)]
pub struct ShiftArgs {
    #[arg(long, default_value_t = 1)]
    pub s: u32,
    #[arg(long, default_value_t = 1)]
    pub t: u32,
    /// `uniform`, `signs` or `non-degenerate:delta=0.5`.
    #[arg(long, default_value = "uniform")]
    pub law: String,
    /// Shift file: a JSON list of `{Q, J, K, c}` entries.
    #[arg(long)]
    pub shift: Option<PathBuf>,
    /// Rescale so that max_Q ‖K_Q‖_∞ μ(Q) equals this value.
    #[arg(long)]
    pub l1_normalize: Option<f64>,
}

#[derive(Args, Debug, Clone)]
pub struct FunctionArgs {
    /// Dimension of the random test function.
    #[arg(long, default_value_t = 1)]
    pub d: usize,
    /// Function file `{d, values}` with values in Morton leaf order.
    #[arg(long)]
    pub f: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct WeightArgs {
    /// Matrix size of the random weight.
    #[arg(long = "wd", default_value_t = 2)]
    pub d: usize,
    /// `independent:kappa_max=50` or `path-smooth:kappa_max=50,step=0.5`.
    #[arg(long, default_value = "independent:kappa_max=1000")]
    pub weight: String,
    /// Weight file `{d, matrices}`; overrides the preset.
    #[arg(long)]
    pub weight_file: Option<PathBuf>,
    #[arg(long, default_value_t = 2.0)]
    pub p: f64,
}

#[derive(Subcommand, Debug)]
pub enum HaarCmd {
    /// Gram deviation, Ξ values and the balanced verdict.
    Check {
        #[command(flatten)]
        tree: TreeArgs,
        #[arg(long, default_value_t = 8.0)]
        bound: f64,
    },
}

#[derive(Subcommand, Debug)]
pub enum ShiftCmd {
    /// Apply a shift to a function.
    Apply {
        #[command(flatten)]
        tree: TreeArgs,
        #[command(flatten)]
        shift: ShiftArgs,
        #[command(flatten)]
        f: FunctionArgs,
    },
    /// L¹-normalization verdict; exits 1 when the bound fails.
    CheckL1 {
        #[command(flatten)]
        tree: TreeArgs,
        #[command(flatten)]
        shift: ShiftArgs,
        #[arg(long, default_value_t = 1.0)]
        c: f64,
    },
    /// Empirical weak-(1,1) constant over random functions.
    Weak11 {
        #[command(flatten)]
        tree: TreeArgs,
        #[command(flatten)]
        shift: ShiftArgs,
        /// Use a random martingale multiplier instead of a shift.
        #[arg(long)]
        multiplier: bool,
        #[arg(long, default_value_t = 1)]
        d: usize,
        #[arg(long, default_value_t = 20)]
        trials: usize,
    },
}

#[derive(Subcommand, Debug)]
pub enum BodyCmd {
    /// Membership of a point in the zonotope spanned by the generators.
    Member {
        /// Generator file `{d, generators}`.
        #[arg(long)]
        generators: PathBuf,
        /// Comma-separated coordinates.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        point: Vec<f64>,
    },
    /// John ellipsoid and its sampled outer factor.
    John {
        #[arg(long)]
        generators: PathBuf,
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Regime {
    Balanced,
    L1,
    Multiplier,
}

#[derive(Subcommand, Debug)]
pub enum SparseCmd {
    /// Build a sparse family and its domination certificate at the root.
    Build {
        #[arg(long, value_enum, default_value_t = Regime::Balanced)]
        regime: Regime,
        #[command(flatten)]
        tree: TreeArgs,
        #[command(flatten)]
        shift: ShiftArgs,
        #[command(flatten)]
        f: FunctionArgs,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum OperatorKind {
    Multiplier,
    Shift,
}

#[derive(Subcommand, Debug)]
pub enum WeightsCmd {
    /// Matrix A_p characteristic.
    Ap {
        #[command(flatten)]
        tree: TreeArgs,
        #[command(flatten)]
        w: WeightArgs,
    },
    /// A_p^N characteristic.
    Apn {
        #[command(flatten)]
        tree: TreeArgs,
        #[command(flatten)]
        w: WeightArgs,
        #[arg(long = "big-n", default_value_t = 1)]
        big_n: u32,
    },
    /// A_p^b characteristic.
    Apb {
        #[command(flatten)]
        tree: TreeArgs,
        #[command(flatten)]
        w: WeightArgs,
    },
    /// Scalar A_∞ characteristic over sampled directions.
    Apinf {
        #[command(flatten)]
        tree: TreeArgs,
        #[command(flatten)]
        w: WeightArgs,
        #[arg(long, default_value_t = 1024)]
        dirs: usize,
    },
    /// Operator norm on L^p(W); exact at p = 2.
    Opnorm {
        #[command(flatten)]
        tree: TreeArgs,
        #[command(flatten)]
        w: WeightArgs,
        #[command(flatten)]
        shift: ShiftArgs,
        #[arg(long, value_enum, default_value_t = OperatorKind::Multiplier)]
        operator: OperatorKind,
        #[arg(long, default_value_t = 8)]
        starts: usize,
    },
    /// Rank-one necessity ratios on random pairs with dist ≤ N + 2.
    Necessity {
        #[command(flatten)]
        tree: TreeArgs,
        #[command(flatten)]
        w: WeightArgs,
        #[arg(long = "big-n", default_value_t = 1)]
        big_n: u32,
        #[arg(long, default_value_t = 5)]
        pairs: usize,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum FamilyKind {
    Constant,
    Matrix,
    Adversarial,
}

#[derive(Subcommand, Debug)]
pub enum CarlesonCmd {
    /// Compatibility, testing and embedding constants of one weight family.
    Verify {
        #[command(flatten)]
        tree: TreeArgs,
        #[command(flatten)]
        w: WeightArgs,
        #[arg(long, value_enum, default_value_t = FamilyKind::Constant)]
        family: FamilyKind,
        /// Log-spread of the adversarial perturbation.
        #[arg(long, default_value_t = 1.0)]
        spread: f64,
        /// Fraction of cubes carrying Carleson mass; dense when omitted.
        #[arg(long)]
        density: Option<f64>,
    },
}

#[derive(Subcommand, Debug)]
pub enum OrliczCmd {
    /// B_p integrability verdict.
    Bp {
        #[arg(long)]
        phi: String,
        #[arg(long, default_value_t = 2.0)]
        p: f64,
    },
    /// ‖M_Φ f‖_p/‖f‖_p as the tree deepens.
    Sweep {
        #[arg(long)]
        phi: String,
        #[arg(long, default_value_t = 2.0)]
        p: f64,
        #[arg(long, default_value = "random-balanced:bound=2,seed=11")]
        measure: String,
        #[arg(long, value_delimiter = ',', default_value = "4,5,6,7,8")]
        depths: Vec<u32>,
        #[arg(long, default_value_t = 200)]
        trials: usize,
    },
    /// Bumped two-weight constant for W and a second weight V.
    Bump {
        #[command(flatten)]
        tree: TreeArgs,
        #[command(flatten)]
        w: WeightArgs,
        #[arg(long)]
        phi: String,
        #[arg(long)]
        psi: String,
        #[arg(long = "big-n", default_value_t = 1)]
        big_n: u32,
    },
}

#[derive(Args, Debug)]
pub struct SuiteArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Pins file; overrides `output.pins`.
    #[arg(long)]
    pub pins: Option<PathBuf>,
    /// Rewrite the pins file from this run.
    #[arg(long)]
    pub write_pins: bool,
    /// Include this timestamp string in the report.
    #[arg(long)]
    pub timestamp: Option<String>,
}

/// Generator file for the `body` commands.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GeneratorFile {
    pub d: usize,
    pub generators: Vec<Vec<f64>>,
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("serializable")
}

struct Env {
    seed: u64,
}

impl Env {
    fn rng(&self, stream: &str) -> SeedRng {
        rng(derive(self.seed, stream, 0))
    }

    fn tree(&self, a: &TreeArgs) -> CliResult<Arc<MeasuredTree>> {
        let t = match &a.tree {
            Some(p) => MeasuredTree::from_file(&read_json::<MeasureFile>(p)?)?,
            None => MeasuredTree::build(a.dim, a.depth, &MeasurePreset::parse(&a.measure)?)?,
        };
        Ok(Arc::new(t))
    }

    fn haar(&self, a: &TreeArgs) -> CliResult<Arc<HaarSystem>> {
        build_haar(self.tree(a)?, &HaarSpec { axis: a.axis })
    }

    fn shift(&self, hs: Arc<HaarSystem>, a: &ShiftArgs) -> CliResult<HaarShift> {
        let mut t = match &a.shift {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
                HaarShift::from_json(hs, &text, (a.s, a.t))?
            }
            None => random_shift(hs, a.s, a.t, parse_law(&a.law)?, &mut self.rng("shift"))?,
        };
        if let Some(c) = a.l1_normalize {
            t.normalize_l1(c);
        }
        Ok(t)
    }

    fn function(&self, tree: &MeasuredTree, a: &FunctionArgs) -> CliResult<LeafFunction> {
        match &a.f {
            Some(p) => {
                let f: LeafFunction = read_json(p)?;
                f.check_tree(tree)?;
                Ok(f)
            }
            None => Ok(random_test_function(
                tree,
                a.d.max(1),
                &mut self.rng("function"),
            )),
        }
    }

    fn weight(&self, tree: &MeasuredTree, a: &WeightArgs) -> CliResult<MatrixWeight> {
        let w = match &a.weight_file {
            Some(p) => MatrixWeight::from_file(&read_json::<MatrixWeightFile>(p)?)?,
            None => {
                if a.d == 0 {
                    return Err(CliError::Config("weight dimension must be ≥ 1".into()));
                }
                random_weight(
                    tree,
                    a.d,
                    &parse_weight_preset(&a.weight)?,
                    &mut self.rng("weight"),
                )
            }
        };
        w.check_tree(tree)?;
        Ok(w)
    }
}

/// Result of one subcommand: a name for output files, the payload and the exit status.
pub struct CommandOutput {
    pub name: String,
    pub value: Value,
    pub status: i32,
    /// Long-form CSV for `--format csv`; flattened from `value` when absent.
    pub csv: Option<String>,
}

impl CommandOutput {
    fn ok(name: &str, value: Value) -> Self {
        CommandOutput {
            name: name.into(),
            value,
            status: 0,
            csv: None,
        }
    }

    pub fn render(&self, format: Format) -> CliResult<String> {
        match format {
            Format::Json => {
                Ok(serde_json::to_string_pretty(&self.value).expect("serializable") + "\n")
            }
            Format::Csv => match &self.csv {
                Some(c) => Ok(c.clone()),
                None => rows_to_csv(&flatten_json(&self.name, &self.value)),
            },
        }
    }
}

pub fn run(cli: &Cli) -> CliResult<CommandOutput> {
    let env = Env { seed: cli.seed };
    let out = match &cli.command {
        Command::Tree(a) => {
            let t = env.tree(a)?;
            let m = t.leaf_masses();
            CommandOutput::ok(
                "tree",
                json!({
                    "n": t.n(),
                    "L": t.depth(),
                    "cubes": t.num_cubes(),
                    "leaves": t.num_leaves(),
                    "min_leaf_mass": m.iter().cloned().fold(f64::INFINITY, f64::min),
                    "max_leaf_mass": m.iter().cloned().fold(0.0, f64::max),
                    "measure": to_value(&t.to_file()),
                }),
            )
        }
        Command::Haar(HaarCmd::Check { tree, bound }) => {
            let hs = env.haar(tree)?;
            let rep = check_balanced(&hs, *bound)?;
            let gram = hs.gram_deviation();
            let mut out = CommandOutput::ok(
                "haar_check",
                json!({ "gram_deviation": gram, "balanced": to_value(&rep) }),
            );
            if gram > 1e-9 {
                out.status = 1;
            }
            out
        }
        Command::Shift(cmd) => shift_cmd(&env, cmd)?,
        Command::Body(cmd) => body_cmd(&env, cmd)?,
        Command::Sparse(SparseCmd::Build {
            regime,
            tree,
            shift,
            f,
        }) => {
            let hs = env.haar(tree)?;
            let t = hs.tree_arc().clone();
            let func = env.function(&t, f)?;
            let opts = SparseOptions::default();
            let build = match regime {
                Regime::Balanced => {
                    build_sparse_balanced(&env.shift(hs, shift)?, &func, &t.root(), &opts)?
                }
                Regime::L1 => build_sparse_l1(&env.shift(hs, shift)?, &func, &t.root(), &opts)?,
                Regime::Multiplier => {
                    let sigma = MartingaleMultiplier::random(&t, &mut env.rng("multiplier"));
                    build_sparse_multiplier(&t, &sigma, &func, &t.root(), &opts)?
                }
            };
            let mut out = CommandOutput::ok("sparse_build", to_value(&build));
            if !build.certificate.passed() {
                out.status = 1;
            }
            out
        }
        Command::Weights(cmd) => weights_cmd(&env, cmd)?,
        Command::Carleson(CarlesonCmd::Verify {
            tree,
            w,
            family,
            spread,
            density,
        }) => {
            let t = env.tree(tree)?;
            let mut r = env.rng("carleson");
            let base: Vec<f64> = (0..t.num_leaves())
                .map(|_| r.gen_range(-1.0..1.0f64).exp())
                .collect();
            let fam = match family {
                FamilyKind::Constant => WeightFamily::constant(&t, &base)?,
                FamilyKind::Matrix => {
                    WeightFamily::from_matrix_weight(&t, &env.weight(&t, w)?, w.p)?
                }
                FamilyKind::Adversarial => WeightFamily::adversarial(&t, &base, *spread, &mut r)?,
            };
            let data = match density {
                Some(d) => CarlesonData::random_sparse(&t, d.clamp(0.0, 1.0), &mut r),
                None => CarlesonData::random_dense(&t, &mut r),
            };
            let rep = verify_embedding_bounds(&t, &fam, &data, w.p, derive(cli.seed, "ascent", 0))?;
            CommandOutput::ok("carleson_verify", to_value(&rep))
        }
        Command::Orlicz(cmd) => orlicz_cmd(&env, cmd)?,
        Command::Suite(a) => {
            let cfg = ExperimentConfig::load(&a.config)?;
            let base = a.config.parent().map(Path::to_path_buf).unwrap_or_default();
            let opts = SuiteOptions {
                jobs: cli.jobs,
                out_dir: cli.out.clone(),
                pins: a.pins.clone(),
                write_pins: a.write_pins,
                timestamp: a.timestamp.clone(),
            };
            let report = run_suite(&cfg, &base, &opts)?;
            let csv = rows_to_csv(report.rows())?;
            CommandOutput {
                name: "report".into(),
                value: to_value(&report),
                status: if report.summary.all_passed { 0 } else { 1 },
                csv: Some(csv),
            }
        }
    };
    Ok(out)
}

fn shift_cmd(env: &Env, cmd: &ShiftCmd) -> CliResult<CommandOutput> {
    Ok(match cmd {
        ShiftCmd::Apply { tree, shift, f } => {
            let hs = env.haar(tree)?;
            let t = env.shift(hs.clone(), shift)?;
            let func = env.function(hs.tree(), f)?;
            let tf = apply_shift(&t, &func)?;
            CommandOutput::ok(
                "shift_apply",
                json!({ "f": to_value(&func), "Tf": to_value(&tf), "entries": t.len() }),
            )
        }
        ShiftCmd::CheckL1 { tree, shift, c } => {
            let hs = env.haar(tree)?;
            let t = env.shift(hs, shift)?;
            let rep = is_l1_normalized(&t, *c);
            let mut out = CommandOutput::ok("shift_check_l1", to_value(&rep));
            if !rep.verdict {
                out.status = 1;
            }
            out
        }
        ShiftCmd::Weak11 {
            tree,
            shift,
            multiplier,
            d,
            trials,
        } => {
            let hs = env.haar(tree)?;
            let mut r = env.rng("weak11");
            let rep = if *multiplier {
                let sigma = MartingaleMultiplier::random(hs.tree(), &mut r);
                weak_type_experiment(
                    hs.tree(),
                    WeakOperator::Multiplier(&sigma),
                    *d,
                    *trials,
                    &mut r,
                )?
            } else {
                let t = env.shift(hs.clone(), shift)?;
                weak_type_experiment(hs.tree(), WeakOperator::Shift(&t), *d, *trials, &mut r)?
            };
            CommandOutput::ok("shift_weak11", to_value(&rep))
        }
    })
}

fn body_cmd(env: &Env, cmd: &BodyCmd) -> CliResult<CommandOutput> {
    Ok(match cmd {
        BodyCmd::Member { generators, point } => {
            let g: GeneratorFile = read_json(generators)?;
            let z = Zonotope::new(g.d, &g.generators)?;
            let m = z.member(point)?;
            CommandOutput::ok("body_member", to_value(&m))
        }
        BodyCmd::John { generators, tol } => {
            let g: GeneratorFile = read_json(generators)?;
            let z = Zonotope::new(g.d, &g.generators)?;
            let e = john_ellipsoid(&z, *tol);
            let outer = outer_factor(&z, &e, 40, &mut env.rng("john"));
            CommandOutput::ok(
                "body_john",
                json!({ "ellipsoid": to_value(&e), "rank": e.rank(), "outer_factor": outer }),
            )
        }
    })
}

fn weights_cmd(env: &Env, cmd: &WeightsCmd) -> CliResult<CommandOutput> {
    Ok(match cmd {
        WeightsCmd::Ap { tree, w } => {
            let t = env.tree(tree)?;
            CommandOutput::ok(
                "weights_ap",
                to_value(&ap_constant(&t, &env.weight(&t, w)?, w.p)?),
            )
        }
        WeightsCmd::Apn { tree, w, big_n } => {
            let hs = env.haar(tree)?;
            let wt = env.weight(hs.tree(), w)?;
            CommandOutput::ok(
                "weights_apn",
                to_value(&apn_constant(&hs, &wt, w.p, *big_n)?),
            )
        }
        WeightsCmd::Apb { tree, w } => {
            let hs = env.haar(tree)?;
            let wt = env.weight(hs.tree(), w)?;
            CommandOutput::ok("weights_apb", to_value(&apb_constant(&hs, &wt, w.p)?))
        }
        WeightsCmd::Apinf { tree, w, dirs } => {
            let t = env.tree(tree)?;
            CommandOutput::ok(
                "weights_apinf",
                to_value(&ap_infty_sc(&t, &env.weight(&t, w)?, w.p, *dirs)?),
            )
        }
        WeightsCmd::Opnorm {
            tree,
            w,
            shift,
            operator,
            starts,
        } => {
            let hs = env.haar(tree)?;
            let t = hs.tree_arc().clone();
            let wt = env.weight(&t, w)?;
            let mut r = env.rng("opnorm");
            let rep = match operator {
                OperatorKind::Multiplier => {
                    let sigma = MartingaleMultiplier::random(&t, &mut r);
                    weighted_operator_norm(
                        &t,
                        &WeightedOperator::Multiplier(&sigma),
                        &wt,
                        w.p,
                        *starts,
                        &mut r,
                    )?
                }
                OperatorKind::Shift => {
                    let sh = env.shift(hs, shift)?;
                    weighted_operator_norm(
                        &t,
                        &WeightedOperator::Shift(&sh),
                        &wt,
                        w.p,
                        *starts,
                        &mut r,
                    )?
                }
            };
            CommandOutput::ok("weights_opnorm", to_value(&rep))
        }
        WeightsCmd::Necessity {
            tree,
            w,
            big_n,
            pairs,
        } => {
            let hs = env.haar(tree)?;
            let t = hs.tree_arc().clone();
            let wt = env.weight(&t, w)?;
            let mut r = env.rng("necessity");
            let cands: Vec<(CubeId, CubeId)> = pairs_within(&t, big_n + 2)
                .into_iter()
                .filter(|(j, k)| j.level > 0 && k.level > 0 && !t.is_leaf(j) && !t.is_leaf(k))
                .collect();
            if cands.is_empty() {
                return Err(CliError::Config("the tree has no admissible pairs".into()));
            }
            let mut reports = Vec::new();
            for _ in 0..*pairs {
                let (j, k) = cands[r.gen_range(0..cands.len())];
                reports.push(necessity_experiment(
                    &hs, &wt, w.p, *big_n, &j, &k, None, &mut r,
                )?);
            }
            CommandOutput::ok("weights_necessity", to_value(&reports))
        }
    })
}

fn orlicz_cmd(env: &Env, cmd: &OrliczCmd) -> CliResult<CommandOutput> {
    Ok(match cmd {
        OrliczCmd::Bp { phi, p } => {
            let f = YoungFunction::parse(phi)?;
            CommandOutput::ok("orlicz_bp", to_value(&bp_check(&f, *p)?))
        }
        OrliczCmd::Sweep {
            phi,
            p,
            measure,
            depths,
            trials,
        } => {
            let f = YoungFunction::parse(phi)?;
            let fine_depth = depths
                .iter()
                .copied()
                .max()
                .ok_or_else(|| CliError::Config("no depths".into()))?;
            let fine = MeasuredTree::build(1, fine_depth, &MeasurePreset::parse(measure)?)?;
            let sweep = maximal_depth_sweep(
                &fine,
                &f,
                *p,
                depths,
                *trials,
                derive(env.seed, "orlicz", 0),
            )?;
            CommandOutput::ok("orlicz_sweep", to_value(&sweep))
        }
        OrliczCmd::Bump {
            tree,
            w,
            phi,
            psi,
            big_n,
        } => {
            let hs = env.haar(tree)?;
            let wt = env.weight(hs.tree(), w)?;
            let v = random_weight(
                hs.tree(),
                wt.d(),
                &parse_weight_preset(&w.weight)?,
                &mut env.rng("bump_v"),
            );
            let rep = bump_constant(
                &hs,
                &wt,
                &v,
                &YoungFunction::parse(phi)?,
                &YoungFunction::parse(psi)?,
                w.p,
                *big_n,
            )?;
            CommandOutput::ok("orlicz_bump", to_value(&rep))
        }
    })
}

/// Parses, runs and prints; returns the process exit code.
pub fn main_with(cli: Cli) -> i32 {
    match run(&cli).and_then(|out| {
        let text = out.render(cli.format)?;
        if let Some(dir) = &cli.out {
            let ext = match cli.format {
                Format::Json => "json",
                Format::Csv => "csv",
            };
            // the suite writes its own report files
            if !matches!(cli.command, Command::Suite(_)) {
                write_file(&dir.join(format!("{}.{ext}", out.name)), &text)?;
            }
        }
        print!("{text}");
        Ok(out.status)
    }) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
