//! Curated instances where the plain sparse bound needs a far larger
//! constant than the modified one.

use crate::error::{CliError, CliResult};
use dyadlab::dyadic::{CubeId, MeasureFile, MeasuredTree};
use dyadlab::function::LeafFunction;
use dyadlab::haar::{build_haar_1d, HaarSystem};
use dyadlab::shifts::{apply_shift, HaarShift, ShiftEntry};
use dyadlab::sparse::{build_sparse_balanced, certify, CertificateMode, SparseOptions};
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::sync::Arc;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CuratedInstance {
    pub name: String,
    pub description: String,
    pub measure: MeasureFile,
    pub s: u32,
    pub t: u32,
    pub shift: Vec<ShiftEntry>,
    pub d: usize,
    /// Leaf values in Morton order, `d` per leaf.
    pub f: Vec<f64>,
    pub q0: CubeId,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CuratedVerdict {
    pub name: String,
    #[serde(rename = "C")]
    pub c: f64,
    pub modified_passes: bool,
    pub plain_fails_at_10c: bool,
    pub plain_leaves_failing: usize,
}

/// 1D measure whose leftmost chain keeps 1 − ε of the mass at every split;
/// every other cube splits evenly.
pub fn heavy_chain(depth: u32, eps: f64) -> CliResult<MeasuredTree> {
    let leaves = 1usize << depth;
    let mut masses = vec![0.0; leaves];
    for (x, m) in masses.iter_mut().enumerate() {
        // the first level at which x leaves the chain
        let off = (0..depth).find(|&l| (x >> (depth - 1 - l)) & 1 == 1);
        *m = match off {
            None => (1.0 - eps).powi(depth as i32),
            Some(l) => (1.0 - eps).powi(l as i32) * eps * 0.5f64.powi((depth - 1 - l) as i32),
        };
    }
    Ok(MeasuredTree::from_morton(1, depth, masses)?)
}

/// Constant (s, t) shift on a heavy chain and a unit spike on `leaf`.
pub fn heavy_chain_instance(
    name: &str,
    depth: u32,
    eps: f64,
    s: u32,
    t: u32,
    leaf: usize,
) -> CliResult<CuratedInstance> {
    let tree = Arc::new(heavy_chain(depth, eps)?);
    let hs = Arc::new(build_haar_1d(tree.clone())?);
    let shift = HaarShift::constant(hs, s, t, 1.0)?;
    let mut f = vec![0.0; tree.num_leaves()];
    f[leaf] = 1.0;
    Ok(CuratedInstance {
        name: name.to_string(),
        description: format!(
            "heavy chain, depth {depth}, light mass {eps}; constant ({s},{t}) shift; spike on leaf {leaf}"
        ),
        measure: tree.to_file(),
        s,
        t,
        shift: shift.entries(),
        d: 1,
        f,
        q0: tree.root(),
    })
}

/// The shipped set: light mass 1e-3, spike in the light half.
pub fn curated() -> CliResult<Vec<CuratedInstance>> {
    Ok(vec![
        heavy_chain_instance("heavy_chain_01", 5, 1e-3, 0, 1, 16)?,
        heavy_chain_instance("heavy_chain_11", 5, 1e-3, 1, 1, 24)?,
        heavy_chain_instance("heavy_chain_02", 6, 1e-3, 0, 2, 32)?,
    ])
}

/// Writes `curated()` as pretty JSON, one file per instance.
pub fn write_curated(dir: &Path) -> CliResult<Vec<std::path::PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let mut out = Vec::new();
    for inst in curated()? {
        let path = dir.join(format!("{}.json", inst.name));
        let text = serde_json::to_string_pretty(&inst).expect("serializable");
        std::fs::write(&path, text + "\n").map_err(|e| CliError::io(&path, e))?;
        out.push(path);
    }
    Ok(out)
}

impl CuratedInstance {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn materialize(&self) -> CliResult<(Arc<HaarSystem>, HaarShift, LeafFunction)> {
        let tree = Arc::new(MeasuredTree::from_file(&self.measure)?);
        let hs = Arc::new(build_haar_1d(tree)?);
        let shift = HaarShift::from_entries(hs.clone(), self.s, self.t, &self.shift)?;
        let f = LeafFunction::new(self.d, self.f.clone())?;
        Ok((hs, shift, f))
    }

    /// Modified certificate at the auto-searched C, then the plain recheck at 10·C.
    pub fn check(&self) -> CliResult<CuratedVerdict> {
        let (hs, shift, f) = self.materialize()?;
        let build = build_sparse_balanced(&shift, &f, &self.q0, &SparseOptions::default())?;
        let tree = hs.tree();
        let tf = apply_shift(&shift, &f)?;
        let plain = certify(
            tree,
            hs.m_all(),
            &tf,
            &f,
            &self.q0,
            &build.family,
            CertificateMode::Plain,
            10.0 * build.c,
        );
        Ok(CuratedVerdict {
            name: self.name.clone(),
            c: build.c,
            modified_passes: build.certificate.passed(),
            plain_fails_at_10c: !plain.passed(),
            plain_leaves_failing: plain.leaves_failing,
        })
    }
}
