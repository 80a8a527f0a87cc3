use rand::{Rng, RngExt};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::{CompletionMask, FrameLabel};

/// Number of leading context keyframes for in-betweening.
pub const CONTEXT_FRAMES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioKind {
    #[serde(rename = "inbetween")]
    InBetweening,
    #[serde(rename = "infill")]
    InFilling,
    #[serde(rename = "blend")]
    Blending,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 3] = [ScenarioKind::InBetweening, ScenarioKind::InFilling, ScenarioKind::Blending];

    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::InBetweening => "inbetween",
            ScenarioKind::InFilling => "infill",
            ScenarioKind::Blending => "blend",
        }
    }

    /// Largest parameter whose mask fits in `len` frames.
    pub fn max_param(self, len: usize) -> usize {
        match self {
            ScenarioKind::InBetweening => len.saturating_sub(CONTEXT_FRAMES + 1),
            ScenarioKind::InFilling => len.saturating_sub(1),
            ScenarioKind::Blending => len / 2,
        }
    }
}

/// One concrete completion problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Scenario {
    /// Ten context keyframes, `length` unknown frames, one target keyframe.
    #[serde(rename = "inbetween")]
    InBetweening { length: usize },
    /// Keyframes every `interval` frames.
    #[serde(rename = "infill")]
    InFilling { interval: usize },
    /// `window / 2` keyframes, `window` unknown frames, `window / 2` keyframes.
    #[serde(rename = "blend")]
    Blending { window: usize },
}

impl Scenario {
    pub fn new(kind: ScenarioKind, param: usize) -> Self {
        match kind {
            ScenarioKind::InBetweening => Scenario::InBetweening { length: param },
            ScenarioKind::InFilling => Scenario::InFilling { interval: param },
            ScenarioKind::Blending => Scenario::Blending { window: param },
        }
    }

    pub fn kind(self) -> ScenarioKind {
        match self {
            Scenario::InBetweening { .. } => ScenarioKind::InBetweening,
            Scenario::InFilling { .. } => ScenarioKind::InFilling,
            Scenario::Blending { .. } => ScenarioKind::Blending,
        }
    }

    pub fn param(self) -> usize {
        match self {
            Scenario::InBetweening { length: p }
            | Scenario::InFilling { interval: p }
            | Scenario::Blending { window: p } => p,
        }
    }

    pub fn mask(self, len: usize) -> Result<CompletionMask> {
        make_mask(self.kind(), self.param(), len)
    }
}

impl std::fmt::Display for Scenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}-{}", self.kind().name(), self.param())
    }
}

/// Builds the mask of a scenario over `len` frames.
pub fn make_mask(kind: ScenarioKind, param: usize, len: usize) -> Result<CompletionMask> {
    let too_big = || Error::DoesNotFit(format!("{} {param} in {len} frames", kind.name()));
    if param == 0 || param > kind.max_param(len) {
        return Err(too_big());
    }
    let mut labels = vec![FrameLabel::Ignored; len];
    match kind {
        ScenarioKind::InBetweening => {
            labels[..CONTEXT_FRAMES].fill(FrameLabel::Keyframe);
            labels[CONTEXT_FRAMES..CONTEXT_FRAMES + param].fill(FrameLabel::Unknown);
            labels[CONTEXT_FRAMES + param] = FrameLabel::Keyframe;
        }
        ScenarioKind::InFilling => {
            let last = (len - 1) / param * param;
            for (t, l) in labels[..=last].iter_mut().enumerate() {
                *l = if t % param == 0 { FrameLabel::Keyframe } else { FrameLabel::Unknown };
            }
        }
        ScenarioKind::Blending => {
            let k = param / 2;
            if k == 0 {
                return Err(too_big());
            }
            labels[..k].fill(FrameLabel::Keyframe);
            labels[k..k + param].fill(FrameLabel::Unknown);
            labels[k + param..2 * k + param].fill(FrameLabel::Keyframe);
        }
    }
    CompletionMask::new(labels)
}

/// Inclusive parameter ranges scenarios are sampled from during training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioSpec {
    pub kinds: Vec<ScenarioKind>,
    pub inbetween_length: (usize, usize),
    pub infill_interval: (usize, usize),
    pub blend_window: (usize, usize),
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self {
            kinds: ScenarioKind::ALL.to_vec(),
            inbetween_length: (5, 39),
            infill_interval: (5, 30),
            blend_window: (5, 32),
        }
    }
}

impl ScenarioSpec {
    pub fn range(&self, kind: ScenarioKind) -> (usize, usize) {
        match kind {
            ScenarioKind::InBetweening => self.inbetween_length,
            ScenarioKind::InFilling => self.infill_interval,
            ScenarioKind::Blending => self.blend_window,
        }
    }

    /// Kinds with at least one parameter that fits in `len` frames.
    pub fn feasible(&self, len: usize) -> Vec<ScenarioKind> {
        self.kinds
            .iter()
            .copied()
            .filter(|&k| self.range(k).0.max(1) <= self.range(k).1.min(k.max_param(len)))
            .collect()
    }

    pub fn validate(&self, len: usize) -> Result<()> {
        for &k in &self.kinds {
            let (lo, hi) = self.range(k);
            if lo == 0 || lo > hi {
                return Err(Error::Config(format!("{} range ({lo}, {hi}) is empty", k.name())));
            }
        }
        if self.feasible(len).is_empty() {
            return Err(Error::DoesNotFit(format!("no configured scenario fits in {len} frames")));
        }
        Ok(())
    }

    /// A kind uniformly among the feasible ones, then a parameter uniformly in
    /// its range, clipped to what fits.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, len: usize) -> Result<Scenario> {
        let kinds = self.feasible(len);
        if kinds.is_empty() {
            return Err(Error::DoesNotFit(format!("no configured scenario fits in {len} frames")));
        }
        let kind = kinds[rng.random_range(0..kinds.len())];
        let (lo, hi) = self.range(kind);
        Ok(Scenario::new(kind, rng.random_range(lo.max(1)..=hi.min(kind.max_param(len)))))
    }
}
