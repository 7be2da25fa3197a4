//! Run configuration shared by every command.
//!
//! Every field has a default; unknown keys are rejected. One global seed is
//! fanned out to the stochastic components by key mixing.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use solmplan::metric::MetricConfig;
use solmplan::observation::ObservationParams;
use solmplan::registration::MdeParams;
use solmplan::scan::LidarModel;
use solmplan::scene::SceneParams;
use solmplan::search::SearchWeights;
use solmplan::seed;
use solmplan::solm::{GridSpec, SolmConfig};
use solmplan::traj::OptParams;
use solmplan::{Error, Result};

/// Placement of the loss-map grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    /// xy cell size (m).
    pub resolution: f64,
    /// Yaw channels; unset means 1 for a 360° sensor and 8 otherwise.
    pub channels: Option<usize>,
    /// `[[x_lo, y_lo], [x_hi, y_hi]]`; unset means the scene bounds.
    pub bounds: Option<[[f64; 2]; 2]>,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            resolution: 0.25,
            channels: None,
            bounds: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Scene description file.
    pub scene: Option<PathBuf>,
    /// LiDAR preset, `mid70-like` or `spin-360`.
    pub lidar: String,
    pub seed: u64,
    /// Worker threads; 0 uses every core.
    pub workers: usize,
    /// Clearance kept from obstacles (m), used by the loss map, the search
    /// and the optimizer.
    pub r_safe: f64,
    /// Average speed used to time the initial trajectory (m/s).
    pub v_avg: f64,
    /// Trajectory CSV sample rate (Hz).
    pub sample_rate: f64,
    /// Time between validated poses (s).
    pub validate_interval: f64,
    pub scene_params: SceneParams,
    pub observation: ObservationParams,
    pub metric: MetricConfig,
    pub grid: GridConfig,
    pub planner: SearchWeights,
    pub optimizer: OptParams,
    pub mde: MdeParams,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            scene: None,
            lidar: "mid70-like".into(),
            seed: 0,
            workers: 0,
            r_safe: 0.3,
            v_avg: 0.5,
            sample_rate: 50.0,
            validate_interval: 1.0,
            scene_params: SceneParams::default(),
            observation: ObservationParams::default(),
            metric: MetricConfig::default(),
            grid: GridConfig::default(),
            planner: SearchWeights::default(),
            optimizer: OptParams::default(),
            mde: MdeParams::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> std::result::Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        let cfg = Self::from_toml_str(&text).map_err(|message| Error::Parse {
            path: path.to_path_buf(),
            message,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.lidar_model()?;
        self.metric.validate()?;
        self.planner().validate()?;
        self.optimizer().validate()?;
        self.mde.validate()?;
        for (name, v) in [
            ("r_safe", self.r_safe),
            ("v_avg", self.v_avg),
            ("sample_rate", self.sample_rate),
            ("validate_interval", self.validate_interval),
            ("grid.resolution", self.grid.resolution),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        if self.grid.channels == Some(0) {
            return Err(Error::InvalidParameter("grid.channels must be positive".into()));
        }
        Ok(())
    }

    pub fn lidar_model(&self) -> Result<LidarModel> {
        LidarModel::preset(&self.lidar).ok_or_else(|| {
            Error::InvalidParameter(format!(
                "unknown LiDAR preset '{}' (expected mid70-like or spin-360)",
                self.lidar
            ))
        })
    }

    pub fn channels(&self) -> Result<usize> {
        let full = self.lidar_model()?.is_full_circle();
        Ok(self.grid.channels.unwrap_or(if full { 1 } else { 8 }))
    }

    pub fn planner(&self) -> SearchWeights {
        SearchWeights {
            r_safe: self.r_safe,
            ..self.planner
        }
    }

    pub fn optimizer(&self) -> OptParams {
        OptParams {
            r_safe: self.r_safe,
            ..self.optimizer
        }
    }

    pub fn mde_params(&self) -> MdeParams {
        MdeParams {
            seed: seed::mix(self.seed, seed::stream::MDE),
            ..self.mde
        }
    }

    pub fn map_seed(&self) -> u64 {
        seed::mix(self.seed, seed::stream::MAP)
    }

    pub fn solm_config(&self) -> Result<SolmConfig> {
        Ok(SolmConfig {
            lidar: self.lidar_model()?,
            observation: self.observation,
            metric: self.metric,
            r_safe: self.r_safe,
            seed: seed::mix(self.seed, seed::stream::SOLM),
        })
    }

    /// Grid over the configured bounds, or over `scene_bounds` when unset.
    pub fn grid_spec(&self, scene_bounds: ([f64; 2], [f64; 2])) -> Result<GridSpec> {
        let (lo, hi) = match self.grid.bounds {
            Some([lo, hi]) => (lo, hi),
            None => scene_bounds,
        };
        if !(hi[0] > lo[0] && hi[1] > lo[1]) {
            return Err(Error::InvalidParameter(format!("empty grid bounds {lo:?}..{hi:?}")));
        }
        Ok(GridSpec::covering(lo, hi, self.grid.resolution, self.channels()?))
    }

    pub fn threads(&self) -> usize {
        if self.workers == 0 {
            std::thread::available_parallelism().map_or(1, |n| n.get())
        } else {
            self.workers
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(RunConfig::from_toml_str("").unwrap(), RunConfig::default());
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_toml_str("colour = 3").is_err());
        assert!(RunConfig::from_toml_str("[planner]\nrho = 1.0").is_err());
        assert!(RunConfig::from_toml_str("[optimizer]\nr_safe = 1.0").is_err());
    }

    #[test]
    fn sections_override_defaults() {
        let cfg = RunConfig::from_toml_str(
            "lidar = \"spin-360\"\nr_safe = 0.4\n[planner]\nrho_q = 0.0\n[optimizer]\nkappa = 6\nrobot = \"nonholonomic\"\n[grid]\nresolution = 0.5",
        )
        .unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.channels().unwrap(), 1);
        assert_eq!(cfg.planner().rho_q, 0.0);
        assert_eq!(cfg.planner().r_safe, 0.4);
        assert_eq!(cfg.optimizer().r_safe, 0.4);
        assert_eq!(cfg.optimizer().kappa, 6);
        assert_eq!(cfg.solm_config().unwrap().r_safe, 0.4);
    }

    #[test]
    fn invalid_values_are_reported() {
        let bad = [
            "lidar = \"sonar\"",
            "r_safe = -1.0",
            "[metric]\nw1 = 0.9",
            "[grid]\nchannels = 0",
        ];
        for text in bad {
            assert!(RunConfig::from_toml_str(text).unwrap().validate().is_err(), "{text}");
        }
    }

    #[test]
    fn seeds_fan_out() {
        let cfg = RunConfig::default();
        let seeds = [cfg.map_seed(), cfg.mde_params().seed, cfg.solm_config().unwrap().seed];
        assert!(seeds[0] != seeds[1] && seeds[1] != seeds[2] && seeds[0] != seeds[2]);
    }
}
