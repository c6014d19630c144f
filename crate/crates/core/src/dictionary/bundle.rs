//! On-disk dictionary bundle: `manifest.toml`, `config.toml` and raw
//! little-endian f64 matrices stored column-major.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::cluster::Clustering;
use super::dce::{Covariance, DceMode, DceStats};
use super::generate::Dictionary;
use super::grid::GridSpec;
use super::BuildSettings;
use crate::config::ForwardConfig;
use crate::error::{Error, Result};
use crate::forward::ParamVector;

pub const FORMAT_VERSION: u32 = 1;

/// One cluster of atoms with its code book and DCE statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct Subdictionary {
    /// Column indices into the parent dictionary, ascending.
    pub columns: Vec<usize>,
    pub medoid: usize,
    pub w: DMatrix<f64>,
    pub h: DMatrix<f64>,
    pub dce: DceStats,
}

impl Subdictionary {
    pub fn rank(&self) -> usize {
        self.w.ncols()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DictionaryBundle {
    pub config: ForwardConfig,
    pub settings: BuildSettings,
    pub dictionary: Dictionary,
    pub clustering: Clustering,
    pub subs: Vec<Subdictionary>,
    /// `(k, cost)` pairs from the elbow scan, if one was run.
    pub elbow: Vec<(usize, f64)>,
}

impl DictionaryBundle {
    /// Atom block of subdictionary `i`.
    pub fn block(&self, i: usize) -> DMatrix<f64> {
        self.dictionary.atoms.select_columns(&self.subs[i].columns)
    }

    pub fn block_labels(&self, i: usize) -> Vec<ParamVector> {
        self.subs[i].columns.iter().map(|&j| self.dictionary.labels[j]).collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.dictionary.validate()?;
        let p = self.dictionary.n_atoms();
        let m = self.dictionary.n_samples();
        if self.config.measurement.n_samples() != m {
            return Err(Error::Bundle(format!("atoms have {m} samples, configuration expects {}", self.config.measurement.n_samples())));
        }
        if self.clustering.assignment.len() != p || self.subs.len() != self.clustering.k() {
            return Err(Error::Bundle("cluster assignment does not match the dictionary".into()));
        }
        let mut seen = vec![false; p];
        for (i, s) in self.subs.iter().enumerate() {
            if s.columns.is_empty() || !s.columns.contains(&s.medoid) {
                return Err(Error::Bundle(format!("subdictionary {i} is empty or misses its medoid")));
            }
            for &j in &s.columns {
                if j >= p || seen[j] || self.clustering.assignment[j] != i {
                    return Err(Error::Bundle(format!("column {j} is not a unique member of subdictionary {i}")));
                }
                seen[j] = true;
            }
            if s.w.nrows() != m || s.h.nrows() != s.w.ncols() || s.h.ncols() != s.columns.len() {
                return Err(Error::Bundle(format!("subdictionary {i} has inconsistent factor shapes")));
            }
            if s.w.iter().chain(s.h.iter()).any(|v| !(*v >= 0.0)) {
                return Err(Error::Bundle(format!("subdictionary {i} has negative factor entries")));
            }
            if s.dce.mean.len() != m {
                return Err(Error::Bundle(format!("subdictionary {i} DCE statistics have the wrong size")));
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::Bundle("some atoms belong to no subdictionary".into()));
        }
        Ok(())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut files = Vec::new();
        let mut put = |name: String, a: &DMatrix<f64>| -> Result<()> {
            files.push(write_matrix(dir, &name, a)?);
            Ok(())
        };
        put("atoms.f64".into(), &self.dictionary.atoms)?;
        let labels = DMatrix::from_fn(3, self.dictionary.labels.len(), |r, c| self.dictionary.labels[c].0[r]);
        put("labels.f64".into(), &labels)?;
        for (i, s) in self.subs.iter().enumerate() {
            put(format!("sub{i}_w.f64"), &s.w)?;
            put(format!("sub{i}_h.f64"), &s.h)?;
            put(format!("sub{i}_mu.f64"), &DMatrix::from_column_slice(s.dce.mean.len(), 1, s.dce.mean.as_slice()))?;
            let cov = match &s.dce.cov {
                Covariance::Full(c) => c.clone(),
                Covariance::Diagonal(d) => DMatrix::from_column_slice(d.len(), 1, d.as_slice()),
            };
            put(format!("sub{i}_cov.f64"), &cov)?;
        }
        fs::write(dir.join("config.toml"), self.config.to_toml_string())?;
        let manifest = Manifest {
            format_version: FORMAT_VERSION,
            crate_version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: self.config.hash(),
            settings: self.settings.clone(),
            elbow: self.elbow.iter().map(|&(k, c)| ElbowRow { k, cost: c }).collect(),
            medoids: self.clustering.medoids.clone(),
            cluster_cost: self.clustering.cost,
            assignment: self.clustering.assignment.clone(),
            subs: self
                .subs
                .iter()
                .map(|s| SubEntry {
                    medoid: s.medoid,
                    rank: s.rank(),
                    dce_mode: s.dce.mode(),
                    dce_delta: s.dce.delta,
                    dce_samples: s.dce.samples,
                })
                .collect(),
            files,
        };
        let text = toml::to_string(&manifest).map_err(|e| Error::Bundle(format!("manifest encoding failed: {e}")))?;
        let tmp = dir.join("manifest.toml.tmp");
        fs::write(&tmp, text)?;
        fs::rename(tmp, dir.join("manifest.toml"))?;
        Ok(())
    }

    /// Loads and checks a bundle. With `expected`, the stored configuration
    /// hash must match it.
    pub fn load(dir: &Path, expected: Option<&ForwardConfig>) -> Result<Self> {
        let manifest = read_manifest(dir)?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(Error::Bundle(format!("unsupported bundle format version {}", manifest.format_version)));
        }
        let config = ForwardConfig::load(&dir.join("config.toml"))
            .map_err(|e| Error::Bundle(format!("bundle configuration unreadable: {e}")))?;
        if config.hash() != manifest.config_hash {
            return Err(Error::Bundle("stored configuration does not match the manifest hash".into()));
        }
        if let Some(cfg) = expected {
            if cfg.hash() != manifest.config_hash {
                return Err(Error::Bundle(format!(
                    "bundle was built for configuration {} but {} was supplied",
                    &manifest.config_hash[..12],
                    &cfg.hash()[..12]
                )));
            }
        }
        let get = |name: &str| -> Result<DMatrix<f64>> {
            let entry = manifest
                .files
                .iter()
                .find(|f| f.name == name)
                .ok_or_else(|| Error::Bundle(format!("manifest does not list {name}")))?;
            read_matrix(dir, entry)
        };
        let atoms = get("atoms.f64")?;
        let lab = get("labels.f64")?;
        if lab.nrows() != 3 {
            return Err(Error::Bundle("labels must have three rows".into()));
        }
        let labels: Vec<ParamVector> = lab.column_iter().map(|c| ParamVector([c[0], c[1], c[2]])).collect();
        let grid: GridSpec = manifest.settings.grid.clone();
        let dictionary = Dictionary { atoms, labels, grid };

        let k = manifest.subs.len();
        let mut subs = Vec::with_capacity(k);
        for (i, e) in manifest.subs.iter().enumerate() {
            let w = get(&format!("sub{i}_w.f64"))?;
            let h = get(&format!("sub{i}_h.f64"))?;
            let mu = get(&format!("sub{i}_mu.f64"))?;
            let cov = get(&format!("sub{i}_cov.f64"))?;
            let cov = match e.dce_mode {
                DceMode::Full => Covariance::Full(cov),
                DceMode::Diagonal => Covariance::Diagonal(DVector::from_column_slice(cov.as_slice())),
            };
            let dce = DceStats::new(DVector::from_column_slice(mu.as_slice()), cov, e.dce_delta, e.dce_samples)
                .map_err(|err| Error::Bundle(format!("subdictionary {i}: {err}")))?;
            let columns = (0..manifest.assignment.len()).filter(|&j| manifest.assignment[j] == i).collect();
            subs.push(Subdictionary { columns, medoid: e.medoid, w, h, dce });
        }
        let bundle = DictionaryBundle {
            config,
            settings: manifest.settings,
            dictionary,
            clustering: Clustering {
                medoids: manifest.medoids,
                assignment: manifest.assignment,
                cost: manifest.cluster_cost,
                history: Vec::new(),
            },
            subs,
            elbow: manifest.elbow.iter().map(|r| (r.k, r.cost)).collect(),
        };
        bundle.validate()?;
        Ok(bundle)
    }
}

/// Reads only the manifest, e.g. to compare build settings before loading.
pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join("manifest.toml");
    let text = fs::read_to_string(&path).map_err(|e| Error::Bundle(format!("cannot read {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| Error::Bundle(format!("corrupted manifest: {e}")))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    pub crate_version: String,
    pub config_hash: String,
    pub settings: BuildSettings,
    pub elbow: Vec<ElbowRow>,
    pub medoids: Vec<usize>,
    pub cluster_cost: f64,
    pub assignment: Vec<usize>,
    pub subs: Vec<SubEntry>,
    pub files: Vec<FileEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ElbowRow {
    pub k: usize,
    pub cost: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubEntry {
    pub medoid: usize,
    pub rank: usize,
    pub dce_mode: DceMode,
    pub dce_delta: f64,
    pub dce_samples: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub sha256: String,
}

fn write_matrix(dir: &Path, name: &str, a: &DMatrix<f64>) -> Result<FileEntry> {
    let bytes: Vec<u8> = a.as_slice().iter().flat_map(|v| v.to_le_bytes()).collect();
    let sha256 = hex::encode(Sha256::digest(&bytes));
    fs::write(dir.join(name), &bytes)?;
    Ok(FileEntry { name: name.to_string(), rows: a.nrows(), cols: a.ncols(), sha256 })
}

fn read_matrix(dir: &Path, e: &FileEntry) -> Result<DMatrix<f64>> {
    let bytes = fs::read(dir.join(&e.name)).map_err(|err| Error::Bundle(format!("cannot read {}: {err}", e.name)))?;
    if bytes.len() != 8 * e.rows * e.cols {
        return Err(Error::Bundle(format!("{} has {} bytes, expected {}", e.name, bytes.len(), 8 * e.rows * e.cols)));
    }
    if hex::encode(Sha256::digest(&bytes)) != e.sha256 {
        return Err(Error::Bundle(format!("{} fails its checksum", e.name)));
    }
    let v: Vec<f64> = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    Ok(DMatrix::from_vec(e.rows, e.cols, v))
}
