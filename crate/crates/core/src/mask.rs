use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-frame role in a completion problem. The discriminant is the index into
/// the keyframe embedding dictionary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FrameLabel {
    Keyframe = 0,
    Unknown = 1,
    Ignored = 2,
}

impl FrameLabel {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Result<Self> {
        match i {
            0 => Ok(FrameLabel::Keyframe),
            1 => Ok(FrameLabel::Unknown),
            2 => Ok(FrameLabel::Ignored),
            _ => Err(Error::LabelIndex(i)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CompletionMask {
    labels: Vec<FrameLabel>,
}

impl CompletionMask {
    pub fn new(labels: Vec<FrameLabel>) -> Result<Self> {
        if !labels.contains(&FrameLabel::Keyframe) {
            return Err(Error::NoKeyframes);
        }
        Ok(Self { labels })
    }

    pub fn from_indices(indices: &[usize]) -> Result<Self> {
        let labels = indices.iter().map(|&i| FrameLabel::from_index(i)).collect::<Result<_>>()?;
        Self::new(labels)
    }

    pub fn labels(&self) -> &[FrameLabel] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn get(&self, t: usize) -> FrameLabel {
        self.labels[t]
    }

    pub fn set(&mut self, t: usize, label: FrameLabel) -> Result<()> {
        let old = std::mem::replace(&mut self.labels[t], label);
        if !self.labels.contains(&FrameLabel::Keyframe) {
            self.labels[t] = old;
            return Err(Error::NoKeyframes);
        }
        Ok(())
    }

    pub fn frames_with(&self, label: FrameLabel) -> impl Iterator<Item = usize> + '_ {
        self.labels.iter().enumerate().filter(move |(_, l)| **l == label).map(|(t, _)| t)
    }

    pub fn count(&self, label: FrameLabel) -> usize {
        self.labels.iter().filter(|l| **l == label).count()
    }

    pub fn check_len(&self, seq_len: usize) -> Result<()> {
        if self.labels.len() != seq_len {
            return Err(Error::MaskLengthMismatch { mask: self.labels.len(), seq: seq_len });
        }
        Ok(())
    }
}
