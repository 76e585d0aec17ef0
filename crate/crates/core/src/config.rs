//! Top-level experiment configuration, read from TOML.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::allocator::SolverConfig;
use crate::channel::{ChannelConfig, NetworkTopology, Point};
use crate::error::{invalid, Error, Result};
use crate::harness::ExperimentsConfig;
use crate::surrogate::SurrogateConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RoomConfig {
    /// Width, depth and height in metres.
    pub dims: [f64; 3],
    /// APs per row and column of the ceiling grid.
    pub ap_grid: [usize; 2],
    /// Distance from the ceiling down to the receiving plane, metres.
    pub plane_gap: f64,
    pub users: usize,
}

impl Default for RoomConfig {
    fn default() -> Self {
        Self {
            dims: [5.0, 5.0, 3.0],
            ap_grid: [4, 4],
            plane_gap: 2.15,
            users: 10,
        }
    }
}

impl RoomConfig {
    pub fn num_aps(&self) -> usize {
        self.ap_grid[0] * self.ap_grid[1]
    }

    pub fn ap_positions(&self) -> Vec<Point> {
        NetworkTopology::ceiling_grid(self.dims, self.ap_grid[0], self.ap_grid[1])
    }

    pub fn plane_height(&self) -> f64 {
        self.dims[2] - self.plane_gap
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
            return Err(invalid("room dimensions must be positive"));
        }
        if self.ap_grid.contains(&0) || self.users == 0 {
            return Err(invalid("room needs at least one AP and one user"));
        }
        if !(self.plane_gap > 0.0 && self.plane_gap <= self.dims[2]) {
            return Err(invalid("plane gap must lie within the room height"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub room: RoomConfig,
    pub channel: ChannelConfig,
    pub solver: SolverConfig,
    pub surrogate: SurrogateConfig,
    pub experiments: ExperimentsConfig,
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.room.validate()?;
        self.channel.validate()?;
        self.solver.validate()?;
        self.surrogate.validate()?;
        self.experiments.validate()
    }
}
