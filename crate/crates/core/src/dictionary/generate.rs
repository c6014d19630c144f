use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rayon::prelude::*;

use super::grid::GridSpec;
use crate::error::{Error, Result};
use crate::forward::{ParamVector, Simulator};
use crate::measure::{make_datum, PhTrace};

/// Labeled atoms: column `j` is the datum simulated at `labels[j]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dictionary {
    pub atoms: DMatrix<f64>,
    pub labels: Vec<ParamVector>,
    pub grid: GridSpec,
}

impl Dictionary {
    pub fn n_samples(&self) -> usize {
        self.atoms.nrows()
    }

    pub fn n_atoms(&self) -> usize {
        self.atoms.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        if self.labels.len() != self.atoms.ncols() || self.grid.len() != self.atoms.ncols() {
            return Err(Error::Bundle("atom count does not match labels and grid".into()));
        }
        if self.atoms.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::Bundle("dictionary has negative or non-finite entries".into()));
        }
        Ok(())
    }
}

/// Forward solve plus measurement model at `xi`.
pub fn forward_datum(sim: &Simulator, xi: &ParamVector) -> Result<PhTrace> {
    let traj = sim.simulate(xi)?;
    make_datum(&traj.ph(), &sim.config.measurement)
}

/// Per-column atom cache under a directory keyed by the configuration hash.
#[derive(Clone, Debug)]
pub struct AtomCache {
    dir: PathBuf,
}

impl AtomCache {
    pub fn open(root: &Path, sim: &Simulator) -> Result<Self> {
        let dir = root.join(&sim.config.hash()[..16]);
        fs::create_dir_all(&dir)?;
        Ok(AtomCache { dir })
    }

    fn path(&self, xi: &ParamVector) -> PathBuf {
        let bits: Vec<String> = xi.0.iter().map(|v| format!("{:016x}", v.to_bits())).collect();
        self.dir.join(format!("{}.f64", bits.join("-")))
    }

    pub fn get(&self, xi: &ParamVector, m: usize) -> Option<Vec<f64>> {
        let bytes = fs::read(self.path(xi)).ok()?;
        if bytes.len() != 8 * m {
            return None;
        }
        Some(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }

    pub fn put(&self, xi: &ParamVector, values: &[f64]) -> Result<()> {
        let path = self.path(xi);
        let tmp = path.with_extension(format!("tmp{}", std::process::id()));
        let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
        fs::write(&tmp, bytes)?;
        fs::rename(&tmp, &path)?;
        Ok(())
    }
}

/// Simulates every grid node in parallel. With a cache, finished columns are
/// stored as they complete and reused on later runs.
pub fn generate(grid: &GridSpec, sim: &Simulator, cache: Option<&AtomCache>) -> Result<Dictionary> {
    grid.validate()?;
    let m = sim.config.measurement.n_samples();
    let labels = grid.labels();
    let columns: Vec<Result<Vec<f64>>> = labels
        .par_iter()
        .map(|xi| {
            if let Some(v) = cache.and_then(|c| c.get(xi, m)) {
                return Ok(v);
            }
            let d = forward_datum(sim, xi)?;
            if let Some(c) = cache {
                c.put(xi, &d.values)?;
            }
            Ok(d.values)
        })
        .collect();

    let mut failed = Vec::new();
    let mut atoms = DMatrix::zeros(m, labels.len());
    for (j, col) in columns.into_iter().enumerate() {
        match col {
            Ok(v) => atoms.column_mut(j).copy_from_slice(&v),
            Err(e) => failed.push(format!("column {j} at xi = {:?}: {e}", labels[j].0)),
        }
    }
    if !failed.is_empty() {
        return Err(Error::Integration {
            t: f64::NAN,
            reason: format!("{} of {} atoms failed:\n  {}", failed.len(), labels.len(), failed.join("\n  ")),
        });
    }
    Ok(Dictionary { atoms, labels, grid: grid.clone() })
}
