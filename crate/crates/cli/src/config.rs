//! Experiment configuration: one flat TOML table. Every key is optional.
//!
//! | key | meaning | default |
//! |---|---|---|
//! | `seed` | workload seed | 0 |
//! | `cycle_limit` | per-simulation cycle limit | 10000000 |
//! | `mesh_width`, `mesh_height` | mesh size in tiles | 5, 4 |
//! | `region_width`, `region_height` | collective region at the origin | 4, 4 |
//! | `dma_issue_overhead`, `compute_alpha`, `compute_beta`, `barrier_issue` | endpoint timing in cycles | simulator defaults |
//! | `wide_pipeline_depth` | wide reduction pipeline depth (header buffer is one deeper) | 30 |
//! | `impls` | implementations: `naive`, `seq`, `tree`, `hw`; barriers use `sw`, `hw` | all |
//! | `sizes_kib` | transfer sizes in KiB | 1, 2, 4, 8, 16, 32 |
//! | `cols` | block width | 4 |
//! | `rows` | block heights of the 2D commands | 2, 4 |
//! | `participants` | barrier sizes | 2..=16 |
//! | `meshes` | square GEMM mesh sides | 1, 2, 4, ..., 256 |
//! | `tile` | GEMM tile side in elements | 16 |
//! | `energy_table` | TOML energy table replacing the bundled one | bundled |

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use collnoc::collectives::{CollectiveKind, Impl};
use collnoc::endpoint::BarrierKind;
use collnoc::engine::SimConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {0}: {1}")]
    Read(PathBuf, std::io::Error),
    #[error("malformed configuration: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: Option<u64>,
    pub cycle_limit: Option<u64>,
    pub mesh_width: Option<u32>,
    pub mesh_height: Option<u32>,
    pub region_width: Option<u32>,
    pub region_height: Option<u32>,
    pub dma_issue_overhead: Option<u64>,
    pub compute_alpha: Option<u64>,
    pub compute_beta: Option<u64>,
    pub barrier_issue: Option<u64>,
    pub wide_pipeline_depth: Option<u64>,
    pub impls: Option<Vec<String>>,
    pub sizes_kib: Option<Vec<u64>>,
    pub cols: Option<u32>,
    pub rows: Option<Vec<u32>>,
    pub participants: Option<Vec<u32>>,
    pub meshes: Option<Vec<u32>>,
    pub tile: Option<u64>,
    pub energy_table: Option<PathBuf>,
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

fn non_empty<T>(key: &str, v: &[T]) -> Result<(), ConfigError> {
    if v.is_empty() {
        Err(invalid(format!("`{key}` must not be empty")))
    } else {
        Ok(())
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read(path.into(), e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(text)?)
    }

    /// Canonical text used for hashing and for the manifest.
    pub fn canonical(&self) -> String {
        toml::to_string(self).unwrap_or_default()
    }

    pub fn sim_config(&self) -> Result<SimConfig, ConfigError> {
        let mut cfg = SimConfig::default();
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.cycle_limit {
            cfg.cycle_limit = v;
        }
        if let Some(v) = self.mesh_width {
            cfg.mesh.width = v;
        }
        if let Some(v) = self.mesh_height {
            cfg.mesh.height = v;
        }
        if let Some(v) = self.region_width {
            cfg.map.region_w = v;
        }
        if let Some(v) = self.region_height {
            cfg.map.region_h = v;
        }
        if let Some(v) = self.dma_issue_overhead {
            cfg.endpoint.dma_issue_overhead = v;
        }
        if let Some(v) = self.compute_alpha {
            cfg.endpoint.compute_alpha = v;
        }
        if let Some(v) = self.compute_beta {
            cfg.endpoint.compute_beta = v;
        }
        if let Some(v) = self.barrier_issue {
            cfg.endpoint.barrier_issue = v;
        }
        if let Some(v) = self.wide_pipeline_depth {
            cfg.router.wide_pipeline_depth = v;
            cfg.router.hdr_buffer_depth = v as usize + 1;
        }
        cfg.validate().map_err(|e| invalid(e.to_string()))?;
        Ok(cfg)
    }

    pub fn collective_impls(&self, kind: CollectiveKind) -> Result<Vec<Impl>, ConfigError> {
        let names: Vec<String> = match &self.impls {
            Some(v) => v.clone(),
            None => collnoc::collectives::implementations(kind).iter().map(|i| i.name().to_string()).collect(),
        };
        non_empty("impls", &names)?;
        let mut out = vec![];
        for n in names {
            let imp = match n.as_str() {
                "naive" if kind == CollectiveKind::Multicast => Impl::Naive,
                "seq" => Impl::Seq,
                "tree" => Impl::Tree,
                "hw" => Impl::Hw,
                other => return Err(invalid(format!("unknown {kind:?} implementation `{other}`"))),
            };
            if !out.contains(&imp) {
                out.push(imp);
            }
        }
        out.sort();
        Ok(out)
    }

    pub fn barrier_impls(&self) -> Result<Vec<BarrierKind>, ConfigError> {
        let names = self.impls.clone().unwrap_or_else(|| vec!["sw".into(), "hw".into()]);
        non_empty("impls", &names)?;
        names
            .iter()
            .map(|n| match n.as_str() {
                "sw" => Ok(BarrierKind::Sw),
                "hw" => Ok(BarrierKind::Hw),
                other => Err(invalid(format!("unknown barrier implementation `{other}`"))),
            })
            .collect()
    }

    pub fn sizes_bytes(&self) -> Result<Vec<u64>, ConfigError> {
        let v = self.sizes_kib.clone().unwrap_or_else(|| vec![1, 2, 4, 8, 16, 32]);
        non_empty("sizes_kib", &v)?;
        if v.contains(&0) {
            return Err(invalid("`sizes_kib` entries must be positive"));
        }
        Ok(v.into_iter().map(|k| k * 1024).collect())
    }

    pub fn cols(&self) -> Result<u32, ConfigError> {
        match self.cols.unwrap_or(4) {
            0 => Err(invalid("`cols` must be positive")),
            c => Ok(c),
        }
    }

    pub fn rows_2d(&self) -> Result<Vec<u32>, ConfigError> {
        let v = self.rows.clone().unwrap_or_else(|| vec![2, 4]);
        non_empty("rows", &v)?;
        if v.iter().any(|&r| r < 2) {
            return Err(invalid("`rows` entries of the 2D commands must be at least 2"));
        }
        Ok(v)
    }

    pub fn participants(&self) -> Result<Vec<u32>, ConfigError> {
        let v = self.participants.clone().unwrap_or_else(|| (2..=16).collect());
        non_empty("participants", &v)?;
        if v.iter().any(|&m| m < 2) {
            return Err(invalid("`participants` entries must be at least 2"));
        }
        Ok(v)
    }

    pub fn meshes(&self) -> Result<Vec<u32>, ConfigError> {
        let v = self.meshes.clone().unwrap_or_else(|| (0..=8).map(|e| 1 << e).collect());
        non_empty("meshes", &v)?;
        if v.iter().any(|&m| !m.is_power_of_two()) {
            return Err(invalid("`meshes` entries must be powers of two"));
        }
        Ok(v)
    }

    pub fn tile(&self) -> Result<u64, ConfigError> {
        match self.tile.unwrap_or(16) {
            0 => Err(invalid("`tile` must be positive")),
            t => Ok(t),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(ExperimentConfig::parse("sizes = [1]"), Err(ConfigError::Parse(_))));
    }

    #[test]
    fn empty_impl_list_is_invalid() {
        let c = ExperimentConfig::parse("impls = []").unwrap();
        assert!(matches!(c.collective_impls(CollectiveKind::Multicast), Err(ConfigError::Invalid(_))));
        assert!(matches!(c.barrier_impls(), Err(ConfigError::Invalid(_))));
    }

    #[test]
    fn overrides_reach_the_simulator() {
        let c = ExperimentConfig::parse("seed = 7\nwide_pipeline_depth = 4\nmesh_width = 5").unwrap();
        let s = c.sim_config().unwrap();
        assert_eq!((s.seed, s.router.wide_pipeline_depth, s.router.hdr_buffer_depth), (7, 4, 5));
        assert!(ExperimentConfig::parse("region_width = 3").unwrap().sim_config().is_err());
    }

    #[test]
    fn naive_is_not_a_reduction() {
        let c = ExperimentConfig::parse("impls = [\"naive\"]").unwrap();
        assert!(c.collective_impls(CollectiveKind::Reduction).is_err());
        assert_eq!(c.collective_impls(CollectiveKind::Multicast).unwrap(), vec![Impl::Naive]);
    }
}
