//! Atom dictionary over the parameter grid, its k-medoids partition, NMF
//! code books and compression-error statistics.

pub mod bundle;
pub mod cluster;
pub mod dce;
pub mod generate;
pub mod grid;
pub mod nmf;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use bundle::{read_manifest, DictionaryBundle, Subdictionary};
pub use cluster::{cluster, elbow_scan, ClusterOptions, Clustering};
pub use dce::{dce_samples, dce_statistics, estimate_dce, Covariance, DceMode, DceOptions, DceStats};
pub use generate::{forward_datum, generate, AtomCache, Dictionary};
pub use grid::GridSpec;
pub use nmf::{compress, select_rank, singular_values, Nmf, NmfOptions};

use crate::config::ForwardConfig;
use crate::error::Result;
use crate::forward::Simulator;

/// Everything besides the forward configuration that determines a bundle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BuildSettings {
    pub grid: GridSpec,
    pub k: usize,
    /// Fixed NMF rank; `None` applies the singular-value rule per subdictionary.
    pub rank: Option<usize>,
    pub rank_threshold: f64,
    pub dce_samples: usize,
    pub dce_mode: DceMode,
    pub cluster_seed: u64,
    pub nmf_seed: u64,
    pub dce_seed: u64,
    pub restarts: usize,
    /// Values of k for the elbow scan; empty skips it.
    pub elbow_ks: Vec<usize>,
}

impl Default for BuildSettings {
    fn default() -> Self {
        BuildSettings {
            grid: GridSpec::standard(12),
            k: 5,
            rank: Some(3),
            rank_threshold: 1e-3,
            dce_samples: 500,
            dce_mode: DceMode::Diagonal,
            cluster_seed: 1,
            nmf_seed: 2,
            dce_seed: 3,
            restarts: 4,
            elbow_ks: Vec::new(),
        }
    }
}

/// Runs generate, elbow scan, clustering, compression and DCE estimation.
///
/// With `out_dir`, atoms are cached under `out_dir/cache` and the bundle is
/// written to `out_dir`; an existing bundle with identical configuration and
/// settings is loaded instead of rebuilt.
pub fn build(config: &ForwardConfig, settings: &BuildSettings, out_dir: Option<&Path>) -> Result<DictionaryBundle> {
    settings.grid.validate()?;
    if let Some(dir) = out_dir {
        if dir.join("manifest.toml").exists() {
            let m = read_manifest(dir)?;
            if m.config_hash == config.hash() && &m.settings == settings {
                log::info!("bundle in {} is up to date", dir.display());
                return DictionaryBundle::load(dir, Some(config));
            }
            log::info!("bundle in {} is stale; rebuilding", dir.display());
        }
    }
    let sim = Simulator::new(config)?;
    let cache = match out_dir {
        Some(d) => Some(AtomCache::open(&d.join("cache"), &sim)?),
        None => None,
    };
    log::info!("generating {} atoms", settings.grid.len());
    let dictionary = generate(&settings.grid, &sim, cache.as_ref())?;

    let copts = ClusterOptions { restarts: settings.restarts, ..Default::default() };
    let elbow = if settings.elbow_ks.is_empty() {
        Vec::new()
    } else {
        elbow_scan(&dictionary.atoms, &settings.elbow_ks, settings.cluster_seed, &copts)?
    };
    for (k, c) in &elbow {
        log::info!("elbow k = {k}: cost {c:.6e}");
    }
    let mut clustering = cluster(&dictionary.atoms, settings.k, settings.cluster_seed, &copts)?;
    clustering.history.clear();
    log::info!("clusters: sizes {:?}, cost {:.6e}", clustering.sizes(), clustering.cost);

    let spacing = settings.grid.spacing();
    let mut subs = Vec::with_capacity(settings.k);
    for i in 0..settings.k {
        let columns = clustering.members(i);
        let block = dictionary.atoms.select_columns(&columns);
        let sv = singular_values(&block);
        let wanted = settings.rank.unwrap_or_else(|| select_rank(&sv, settings.rank_threshold));
        let rank = wanted.min(columns.len()).max(1);
        if rank != wanted {
            log::warn!("subdictionary {i} has {} atoms; rank lowered to {rank}", columns.len());
        }
        let ratio = sv.get(rank).map_or(0.0, |s| s / sv[0]);
        let nmf = compress(&block, rank, &NmfOptions { seed: settings.nmf_seed.wrapping_add(i as u64), ..Default::default() })?;
        log::info!(
            "subdictionary {i}: {} atoms, rank {rank} (sigma ratio {ratio:.2e}), NMF error {:.3e}",
            columns.len(),
            nmf.relative_error(&block)
        );
        let labels: Vec<_> = columns.iter().map(|&j| dictionary.labels[j]).collect();
        let dopts = DceOptions {
            samples: settings.dce_samples,
            mode: settings.dce_mode,
            seed: settings.dce_seed,
            ..Default::default()
        };
        let dce = estimate_dce(&sim, &nmf.w, &labels, spacing, i, &dopts)?;
        subs.push(Subdictionary { columns, medoid: clustering.medoids[i], w: nmf.w, h: nmf.h, dce });
    }
    let bundle = DictionaryBundle { config: config.clone(), settings: settings.clone(), dictionary, clustering, subs, elbow };
    bundle.validate()?;
    if let Some(dir) = out_dir {
        bundle.save(dir)?;
    }
    Ok(bundle)
}
