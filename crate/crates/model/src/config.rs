use serde::{Deserialize, Serialize};

use crate::error::{ModelError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// One network per array geometry; all channels enter together.
    Fixed,
    /// Weight-shared per-pair network with across-pair mean pooling.
    Variable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Causal: unidirectional narrow-band layers, causal conv padding, recursive normalization.
    Online,
    Offline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub variant: Variant,
    pub mode: Mode,
    /// Microphones (fixed variant only; the variable variant takes any count).
    pub mics: usize,
    pub tracks: usize,
    pub bins: usize,
    pub hidden: usize,
    pub blocks: usize,
    /// Disable to drop every full-band layer (ablation).
    #[serde(default = "yes")]
    pub fullband: bool,
    /// Variable variant: concatenate the across-pair mean (true) or the pair's own state.
    #[serde(default = "yes")]
    pub communication: bool,
    #[serde(default = "default_pools")]
    pub pools: [usize; 2],
    #[serde(default = "default_kernel")]
    pub kernel: [usize; 2],
    /// Frames of memory of the online input normalizer.
    #[serde(default = "default_memory")]
    pub norm_memory: usize,
}

fn yes() -> bool {
    true
}

fn default_pools() -> [usize; 2] {
    [3, 4]
}

fn default_kernel() -> [usize; 2] {
    [3, 3]
}

fn default_memory() -> usize {
    ipdnet_core::dsp::ONLINE_MEMORY
}

impl ModelConfig {
    pub fn fixed(mics: usize, hidden: usize, mode: Mode) -> Self {
        ModelConfig {
            variant: Variant::Fixed,
            mode,
            mics,
            tracks: 2,
            bins: 256,
            hidden,
            blocks: 2,
            fullband: true,
            communication: true,
            pools: default_pools(),
            kernel: default_kernel(),
            norm_memory: default_memory(),
        }
    }

    pub fn variable(hidden: usize, mode: Mode) -> Self {
        ModelConfig {
            variant: Variant::Variable,
            mics: 0,
            ..Self::fixed(0, hidden, mode)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(ModelError::Config(m));
        if self.variant == Variant::Fixed && self.mics < 2 {
            return err(format!("fixed model needs at least 2 microphones, got {}", self.mics));
        }
        if self.tracks == 0 || self.bins == 0 || self.blocks == 0 {
            return err("tracks, bins and blocks must be positive".into());
        }
        if self.hidden < 4 || self.hidden % 4 != 0 {
            return err(format!("hidden size {} must be a positive multiple of 4", self.hidden));
        }
        if self.pools.contains(&0) {
            return err("pooling factors must be positive".into());
        }
        if self.kernel.iter().any(|&k| k == 0 || k % 2 == 0) {
            return err(format!("conv kernel {:?} must be odd", self.kernel));
        }
        if self.norm_memory < 2 {
            return err("normalizer memory must be at least 2 frames".into());
        }
        Ok(())
    }

    /// Input frames per output frame.
    pub fn stride(&self) -> usize {
        self.pools[0] * self.pools[1]
    }

    /// Raw features per time-frequency bin and sequence.
    pub fn raw_width(&self) -> usize {
        match self.variant {
            Variant::Fixed => 2 * self.mics,
            Variant::Variable => 4,
        }
    }

    /// Output channels of the conv head.
    pub fn out_channels(&self) -> usize {
        match self.variant {
            Variant::Fixed => 2 * (self.mics - 1) * self.tracks,
            Variant::Variable => 2 * self.tracks,
        }
    }

    pub fn output_frames(&self, frames: usize) -> usize {
        frames.div_ceil(self.stride())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }
}
