use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::Coord;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub layers: usize,
    pub heads: usize,
    pub d_model: usize,
    pub d_ffn: usize,
    pub t_max: usize,
    pub joints: usize,
    /// Feed and predict positions only (`J x 3` per frame).
    pub positions_only: bool,
    /// Coordinate system the network reads and writes.
    pub coord: Coord,
    /// Add the prefilled input to the output head, so the network predicts a
    /// correction to the interpolation.
    pub residual: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            layers: 8,
            heads: 8,
            d_model: 256,
            d_ffn: 512,
            t_max: 65,
            joints: 22,
            positions_only: false,
            coord: Coord::Local,
            residual: false,
        }
    }
}

impl ModelConfig {
    pub fn input_dim(&self) -> usize {
        self.joints * if self.positions_only { 3 } else { 7 }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [self.layers, self.heads, self.d_model, self.d_ffn, self.t_max, self.joints];
        if dims.contains(&0) {
            return Err(Error::Config(format!("model dimensions must be positive: {self:?}")));
        }
        if !self.d_model.is_multiple_of(self.heads) {
            return Err(Error::Config(format!("d_model {} is not divisible by {} heads", self.d_model, self.heads)));
        }
        Ok(())
    }
}
