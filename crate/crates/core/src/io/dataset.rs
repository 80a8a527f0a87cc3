use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{MotionSequence, Vec3};

/// Sliding window over a long sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub width: usize,
    pub offset: usize,
}

impl WindowSpec {
    pub fn new(width: usize, offset: usize) -> Result<Self> {
        if width < 2 || offset == 0 || offset > width {
            return Err(Error::InvalidWindow { width, offset });
        }
        Ok(Self { width, offset })
    }

    /// Start frames of every full window in a sequence of `len` frames.
    pub fn starts(&self, len: usize) -> impl Iterator<Item = usize> + use<> {
        let (width, offset) = (self.width, self.offset);
        let last = len.checked_sub(width);
        (0..).map(move |i| i * offset).take_while(move |&s| last.is_some_and(|l| s <= l))
    }
}

/// Windows starting at `0, offset, 2 * offset, ...`; a trailing remainder
/// shorter than `width` is dropped.
pub fn slice_windows(seq: &MotionSequence, spec: WindowSpec) -> Result<Vec<MotionSequence>> {
    WindowSpec::new(spec.width, spec.offset)?;
    if seq.len() < spec.width {
        return Err(Error::SequenceTooShort { len: seq.len(), width: spec.width });
    }
    Ok(spec.starts(seq.len()).map(|s| seq.slice(s, spec.width)).collect())
}

pub const STD_FLOOR: f64 = 1e-8;

/// Per-joint, per-axis position statistics of a training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub joints: usize,
    pub mean: Vec<Vec3>,
    pub std: Vec<Vec3>,
}

impl NormStats {
    pub fn identity(joints: usize) -> Self {
        Self { joints, mean: vec![[0.0; 3]; joints], std: vec![[1.0; 3]; joints] }
    }

    pub fn normalize(&self, joint: usize, p: Vec3) -> Vec3 {
        let (m, s) = (self.mean[joint], self.std[joint]);
        [(p[0] - m[0]) / s[0], (p[1] - m[1]) / s[1], (p[2] - m[2]) / s[2]]
    }

    pub fn denormalize(&self, joint: usize, z: Vec3) -> Vec3 {
        let (m, s) = (self.mean[joint], self.std[joint]);
        [z[0] * s[0] + m[0], z[1] * s[1] + m[1], z[2] * s[2] + m[2]]
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let s: NormStats = serde_json::from_str(text)?;
        if s.mean.len() != s.joints || s.std.len() != s.joints {
            return Err(Error::DimensionMismatch(format!(
                "stats declare {} joints but hold {} means and {} stds",
                s.joints,
                s.mean.len(),
                s.std.len()
            )));
        }
        Ok(s)
    }
}

/// Mean and population standard deviation of every joint coordinate over all
/// frames of `train`; deviations are clamped to at least [`STD_FLOOR`].
pub fn compute_norm_stats(train: &[MotionSequence]) -> Result<NormStats> {
    let joints = train.iter().find(|s| !s.is_empty()).map(MotionSequence::num_joints).ok_or(Error::EmptyDataset)?;
    let mut count = 0usize;
    let mut sum = vec![[0.0f64; 3]; joints];
    for seq in train {
        if !seq.is_empty() && seq.num_joints() != joints {
            return Err(Error::DimensionMismatch(format!("{} joints vs {joints}", seq.num_joints())));
        }
        for f in &seq.frames {
            count += 1;
            for (s, p) in sum.iter_mut().zip(&f.positions) {
                (0..3).for_each(|k| s[k] += p[k]);
            }
        }
    }
    let n = count as f64;
    let mean: Vec<Vec3> = sum.iter().map(|s| s.map(|v| v / n)).collect();
    let mut sq = vec![[0.0f64; 3]; joints];
    for f in train.iter().flat_map(|s| &s.frames) {
        for ((acc, p), m) in sq.iter_mut().zip(&f.positions).zip(&mean) {
            (0..3).for_each(|k| acc[k] += (p[k] - m[k]).powi(2));
        }
    }
    let std = sq.iter().map(|s| s.map(|v| (v / n).sqrt().max(STD_FLOOR))).collect();
    Ok(NormStats { joints, mean, std })
}
