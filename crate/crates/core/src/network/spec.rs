use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Deepest decomposition the architecture supports.
pub const MAX_LEVELS: usize = 5;

/// Which subbands of each level are fed into the trunk.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SubbandMode {
    /// LL, LH, HL and HH at every level.
    All,
    /// LH, HL and HH at every level, plus LL at the deepest level only.
    DetailOnly,
}

impl SubbandMode {
    pub fn as_str(self) -> &'static str {
        match self {
            SubbandMode::All => "all",
            SubbandMode::DetailOnly => "detail-only",
        }
    }

    /// Number of subbands injected at `level` out of `levels`.
    pub fn bands_at(self, level: usize, levels: usize) -> usize {
        match self {
            SubbandMode::All => 4,
            SubbandMode::DetailOnly if level == levels => 4,
            SubbandMode::DetailOnly => 3,
        }
    }
}

impl fmt::Display for SubbandMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SubbandMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(SubbandMode::All),
            "detail-only" => Ok(SubbandMode::DetailOnly),
            other => Err(Error::arg(format!(
                "unknown subband mode {other:?} (expected all or detail-only)"
            ))),
        }
    }
}

/// Declarative description of a wavelet CNN.
///
/// The trunk has one stage per entry of `stage_channels`; each stage is a
/// stride-1 conv block followed by a stride-2 conv block, so stage `s`
/// (1-based) ends at `input / 2^s`. The level-`s` subbands join the trunk
/// right after stage `s` for every `s <= levels`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NetworkSpec {
    /// `[C, H, W]`
    pub input_shape: [usize; 3],
    pub levels: usize,
    /// Width of the first stage and of every subband projection.
    pub base_channels: usize,
    pub stage_channels: Vec<usize>,
    pub fc_hidden: usize,
    pub num_classes: usize,
    pub subband_mode: SubbandMode,
}

impl NetworkSpec {
    pub const DEFAULT_BASE_CHANNELS: usize = 32;
    pub const DEFAULT_STAGES: usize = 4;

    /// Desk-scale defaults: four stages, base width 32, all subbands.
    pub fn new(input_shape: [usize; 3], levels: usize, num_classes: usize) -> Self {
        let base = Self::DEFAULT_BASE_CHANNELS;
        NetworkSpec {
            input_shape,
            levels,
            base_channels: base,
            stage_channels: default_schedule(base, Self::DEFAULT_STAGES),
            fc_hidden: 4 * base,
            num_classes,
            subband_mode: SubbandMode::All,
        }
    }

    /// Resets the width schedule and FC head around a new base width.
    pub fn with_base_channels(mut self, base: usize) -> Self {
        self.base_channels = base;
        self.stage_channels = default_schedule(base, self.stages());
        self.fc_hidden = 4 * base;
        self
    }

    pub fn with_stages(mut self, stages: usize) -> Self {
        self.stage_channels = default_schedule(self.base_channels, stages);
        self
    }

    pub fn with_subband_mode(mut self, mode: SubbandMode) -> Self {
        self.subband_mode = mode;
        self
    }

    pub fn stages(&self) -> usize {
        self.stage_channels.len()
    }

    pub fn validate(&self) -> Result<()> {
        let [c, h, w] = self.input_shape;
        let bad = |msg: String| Err(Error::arg(msg));
        if c == 0 || h == 0 || w == 0 {
            return bad(format!(
                "input shape {:?} has an empty axis",
                self.input_shape
            ));
        }
        if self.levels == 0 || self.levels > MAX_LEVELS {
            return bad(format!(
                "levels must be in 1..={MAX_LEVELS}, got {}",
                self.levels
            ));
        }
        if self.stages() == 0 {
            return bad("at least one stride-2 stage is required".into());
        }
        if self.levels > self.stages() {
            return bad(format!(
                "{} levels need at least as many stride-2 stages, found {}",
                self.levels,
                self.stages()
            ));
        }
        let depth = self.levels.max(self.stages());
        let factor = 1usize << depth;
        if h % factor != 0 || w % factor != 0 {
            return bad(format!(
                "input {h}x{w} must be divisible by 2^{depth} = {factor}"
            ));
        }
        if self.base_channels == 0 || self.fc_hidden == 0 || self.stage_channels.contains(&0) {
            return bad("channel widths must be positive".into());
        }
        if self.num_classes < 2 {
            return bad(format!("need at least 2 classes, got {}", self.num_classes));
        }
        Ok(())
    }

    /// Channels of the level-`level` subband tensor before projection.
    pub fn subband_channels(&self, level: usize) -> usize {
        self.input_shape[0] * self.subband_mode.bands_at(level, self.levels)
    }

    /// Spatial size (height, width) of the trunk after `stage` stride-2 stages.
    pub fn spatial_after(&self, stage: usize) -> (usize, usize) {
        (self.input_shape[1] >> stage, self.input_shape[2] >> stage)
    }
}

/// Stage widths `[b, 2b, 2b, 4b, 4b]`, truncated to `stages` entries (and
/// extended with `4b` beyond five).
pub fn default_schedule(base: usize, stages: usize) -> Vec<usize> {
    const MULT: [usize; 5] = [1, 2, 2, 4, 4];
    (0..stages)
        .map(|s| base * MULT.get(s).copied().unwrap_or(4))
        .collect()
}
