//! Run configuration: one TOML file with every default baked in, each field
//! overridable from the command line.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use hdb_core::data::{load_series, synth_series, MarketSeries, SYNTH_MIN_DAYS};
use hdb_core::env::{BidConfig, Method};
use hdb_core::ess::EssParams;
use hdb_core::experiment::Dataset;
use hdb_core::ppo::PpoConfig;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// RT price CSV (`timestamp,node,rt_lmp`); synthetic data is used when unset.
    pub rt_csv: Option<PathBuf>,
    /// DA price CSV (`timestamp,node,da_lmp`).
    pub da_csv: Option<PathBuf>,
    /// Expected node id of the loaded files.
    pub node: Option<String>,
    pub synth_seed: u64,
    pub synth_days: usize,
    pub train_frac: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            rt_csv: None,
            da_csv: None,
            node: None,
            synth_seed: 1,
            synth_days: 30,
            train_frac: 0.7,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub method: Method,
    /// Methods trained by `compare`.
    pub compare: Vec<Method>,
    /// Rollouts between training checkpoints.
    pub checkpoint_every: usize,
    /// Signed power levels in the perfect-foresight optimum.
    pub dp_power_levels: usize,
    pub data: DataConfig,
    pub ess: EssParams,
    pub ppo: PpoConfig,
    pub bid: BidConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: None,
            method: Method::HdbBid,
            compare: Method::ALL.to_vec(),
            checkpoint_every: 10,
            dp_power_levels: 21,
            data: DataConfig::default(),
            ess: EssParams::default(),
            ppo: PpoConfig::default(),
            bid: BidConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg: RunConfig = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        // Data paths are relative to the config file.
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.data.rt_csv, &mut cfg.data.da_csv].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.ess.validate()?;
        self.ppo.validate()?;
        let d = &self.data;
        match (&d.rt_csv, &d.da_csv) {
            (Some(rt), Some(da)) => {
                for p in [rt, da] {
                    ensure!(p.is_file(), "data file {} does not exist", p.display());
                }
            }
            (None, None) => ensure!(
                d.synth_days >= SYNTH_MIN_DAYS,
                "synthetic data needs at least {SYNTH_MIN_DAYS} days"
            ),
            _ => bail!("set both data.rt_csv and data.da_csv, or neither"),
        }
        ensure!(d.train_frac > 0.0 && d.train_frac < 1.0, "data.train_frac must lie in (0, 1)");
        let b = &self.bid;
        ensure!(b.n_pairs >= 1, "bid.n_pairs must be at least 1");
        ensure!(b.m_samples >= 2, "bid.m_samples must be at least 2");
        ensure!(b.range.min < b.range.max, "bid.range.min must be below bid.range.max");
        ensure!(self.dp_power_levels >= 3 && self.dp_power_levels % 2 == 1, "dp_power_levels must be odd and at least 3");
        ensure!(self.checkpoint_every >= 1, "checkpoint_every must be at least 1");
        ensure!(!self.compare.is_empty(), "compare needs at least one method");
        Ok(())
    }

    pub fn series(&self) -> Result<MarketSeries> {
        let d = &self.data;
        let mut series = match (&d.rt_csv, &d.da_csv) {
            (Some(rt), Some(da)) => load_series(rt, da)?,
            _ => synth_series(d.synth_seed, d.synth_days)?,
        };
        match &d.node {
            Some(node) if d.rt_csv.is_some() => ensure!(
                &series.node_id == node,
                "data is for node {}, not {node}",
                series.node_id
            ),
            Some(node) => series.node_id = node.clone(),
            None => {}
        }
        Ok(series)
    }

    pub fn dataset(&self) -> Result<Dataset> {
        Ok(Dataset::from_series(&self.series()?, self.data.train_frac)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_round_trips() {
        let cfg = RunConfig::default();
        let text = cfg.to_toml().unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn edited_config_round_trips() {
        let mut cfg = RunConfig::default();
        cfg.seed = 42;
        cfg.method = Method::ALL[3];
        cfg.compare = vec![Method::HdbBid, Method::ALL[4]];
        cfg.ess.e_max = 6.0;
        cfg.ppo.lr_actor = 1.5e-4;
        cfg.ppo.std.final_std = 0.1;
        cfg.bid.n_pairs = 4;
        cfg.data.rt_csv = Some("rt.csv".into());
        cfg.data.da_csv = Some("da.csv".into());
        let back: RunConfig = toml::from_str(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn partial_files_take_defaults_and_unknown_keys_fail() {
        let cfg: RunConfig = toml::from_str("seed = 3\n[ppo]\ntotal_steps = 100\n").unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.ppo.total_steps, 100);
        assert_eq!(cfg.ppo.lr_actor, PpoConfig::default().lr_actor);
        assert!(toml::from_str::<RunConfig>("sed = 3").is_err());
        assert!(toml::from_str::<RunConfig>("[ppo]\nlr = 1.0").is_err());
    }

    #[test]
    fn data_paths_resolve_against_the_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        fs::write(&path, "[data]\nrt_csv = \"prices/rt.csv\"\nda_csv = \"/abs/da.csv\"\n").unwrap();
        let cfg = RunConfig::load(&path).unwrap();
        assert_eq!(cfg.data.rt_csv.unwrap(), dir.path().join("prices/rt.csv"));
        assert_eq!(cfg.data.da_csv.unwrap(), PathBuf::from("/abs/da.csv"));
    }

    #[test]
    fn validation_rejects_bad_settings() {
        let mut cfg = RunConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.data.rt_csv = Some("rt.csv".into());
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::default();
        cfg.dp_power_levels = 20;
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::default();
        cfg.data.train_frac = 1.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn node_override_renames_synthetic_data() {
        let mut cfg = RunConfig::default();
        cfg.data.synth_days = SYNTH_MIN_DAYS;
        cfg.data.node = Some("WEST".into());
        assert_eq!(cfg.series().unwrap().node_id, "WEST");
    }
}
