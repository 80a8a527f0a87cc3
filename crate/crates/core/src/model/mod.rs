//! The single-shot completion network and its checkpoints.
//!
//! A prefilled sequence is flattened to one pose vector per frame, turned into
//! tokens by a temporal convolution, offset by a learned position embedding
//! plus a learned per-label keyframe embedding, passed through a post-norm
//! transformer encoder and mapped back to pose vectors by a second
//! convolution. Every frame comes out of one encoder pass.

mod checkpoint;
mod config;
pub mod network;
mod params;

use std::sync::atomic::{AtomicUsize, Ordering};

pub use checkpoint::{CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::ModelConfig;
pub use params::{ParamStore, INIT_STD};

use crate::error::{Error, Result};
use crate::io::NormStats;
use crate::kinematics::{Coord, MotionSequence, Pose, Quat, Skeleton};
use crate::mask::{CompletionMask, FrameLabel};
use crate::tensor::{Real, Tape, Tensor};

/// Flattens `seq` into `[T * D]` network inputs: standardized positions then
/// quaternions per frame. Frames labelled `Ignored` in `mask` are zero.
pub fn encode<T: Real>(
    seq: &MotionSequence,
    mask: Option<&CompletionMask>,
    cfg: &ModelConfig,
    stats: &NormStats,
) -> Result<Vec<T>> {
    check_joints(seq, cfg)?;
    if stats.joints != cfg.joints {
        return Err(Error::DimensionMismatch(format!("stats for {} joints, model has {}", stats.joints, cfg.joints)));
    }
    if let Some(m) = mask {
        m.check_len(seq.len())?;
    }
    let d = cfg.input_dim();
    let mut out = vec![T::zero(); seq.len() * d];
    for (t, (f, row)) in seq.frames.iter().zip(out.chunks_exact_mut(d)).enumerate() {
        if mask.is_some_and(|m| m.get(t) == FrameLabel::Ignored) {
            continue;
        }
        for (j, p) in f.positions.iter().enumerate() {
            let z = stats.normalize(j, *p);
            (0..3).for_each(|k| row[j * 3 + k] = T::lit(z[k]));
        }
        if !cfg.positions_only {
            let base = cfg.joints * 3;
            for (j, q) in f.rotations.iter().enumerate() {
                for (k, v) in q.to_array().into_iter().enumerate() {
                    row[base + j * 4 + k] = T::lit(v);
                }
            }
        }
    }
    Ok(out)
}

/// Inverse of [`encode`]. Quaternions are renormalized; in local coordinates
/// bone offsets, and in positions-only mode rotations, come from `template`.
pub fn decode<T: Real>(
    y: &[T],
    template: &MotionSequence,
    cfg: &ModelConfig,
    stats: &NormStats,
) -> Result<MotionSequence> {
    let d = cfg.input_dim();
    if y.len() != template.len() * d {
        return Err(Error::DimensionMismatch(format!(
            "{} outputs for {} frames of width {d}",
            y.len(),
            template.len()
        )));
    }
    let frames = y
        .chunks_exact(d)
        .zip(&template.frames)
        .map(|(row, tf)| {
            let v = |i: usize| row[i].to_f64_lossy();
            let mut positions: Vec<_> =
                (0..cfg.joints).map(|j| stats.denormalize(j, [v(j * 3), v(j * 3 + 1), v(j * 3 + 2)])).collect();
            if cfg.coord == Coord::Local {
                positions[1..].copy_from_slice(&tf.positions[1..]);
            }
            let rotations = if cfg.positions_only {
                tf.rotations.clone()
            } else {
                let b = cfg.joints * 3;
                (0..cfg.joints)
                    .map(|j| {
                        let i = b + j * 4;
                        Quat::new(v(i), v(i + 1), v(i + 2), v(i + 3)).normalize().unwrap_or(Quat::IDENTITY)
                    })
                    .collect()
            };
            Pose { positions, rotations }
        })
        .collect();
    MotionSequence::new(frames, template.frame_rate, cfg.coord)
}

fn check_joints(seq: &MotionSequence, cfg: &ModelConfig) -> Result<()> {
    if seq.num_joints() != cfg.joints {
        return Err(Error::DimensionMismatch(format!(
            "input has {} joints, model expects {}",
            seq.num_joints(),
            cfg.joints
        )));
    }
    if seq.len() > cfg.t_max {
        return Err(Error::DimensionMismatch(format!("{} frames exceed the model's maximum {}", seq.len(), cfg.t_max)));
    }
    Ok(())
}

/// Model configuration, learned parameters and the data statistics needed to
/// run it.
#[derive(Debug)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: ParamStore<f32>,
    /// Position statistics in the model's coordinate system.
    pub norm_stats: Option<NormStats>,
    /// Global-position statistics of the training set, for L2P.
    pub eval_stats: Option<NormStats>,
    pub skeleton: Option<Skeleton>,
    passes: AtomicUsize,
}

impl Clone for Checkpoint {
    fn clone(&self) -> Self {
        Self {
            config: self.config.clone(),
            params: self.params.clone(),
            norm_stats: self.norm_stats.clone(),
            eval_stats: self.eval_stats.clone(),
            skeleton: self.skeleton.clone(),
            passes: AtomicUsize::new(0),
        }
    }
}

impl PartialEq for Checkpoint {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config
            && self.params == other.params
            && self.norm_stats == other.norm_stats
            && self.eval_stats == other.eval_stats
            && self.skeleton == other.skeleton
    }
}

impl Checkpoint {
    /// Freshly initialized parameters.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let params = ParamStore::init(&config, seed)?;
        Ok(Self::from_parts(config, params, None, None, None))
    }

    pub fn from_parts(
        config: ModelConfig,
        params: ParamStore<f32>,
        norm_stats: Option<NormStats>,
        eval_stats: Option<NormStats>,
        skeleton: Option<Skeleton>,
    ) -> Self {
        Self { config, params, norm_stats, eval_stats, skeleton, passes: AtomicUsize::new(0) }
    }

    /// Encoder passes run through this checkpoint so far.
    pub fn forward_passes(&self) -> usize {
        self.passes.load(Ordering::Relaxed)
    }

    pub fn feature_stats(&self) -> NormStats {
        self.norm_stats.clone().unwrap_or_else(|| NormStats::identity(self.config.joints))
    }

    fn to_model_coord(&self, seq: &MotionSequence) -> Result<MotionSequence> {
        if seq.coord == self.config.coord {
            return Ok(seq.clone());
        }
        let skel = self.skeleton.as_ref().ok_or_else(|| {
            Error::DimensionMismatch(format!(
                "input is {:?}, model is {:?} and has no skeleton",
                seq.coord, self.config.coord
            ))
        })?;
        match self.config.coord {
            Coord::Local => seq.to_local(skel),
            Coord::Global => seq.to_global(skel),
        }
    }

    fn back_to_coord(&self, seq: MotionSequence, coord: Coord) -> Result<MotionSequence> {
        match (coord, self.skeleton.as_ref()) {
            (c, _) if c == seq.coord => Ok(seq),
            (Coord::Local, Some(s)) => seq.to_local(s),
            (Coord::Global, Some(s)) => seq.to_global(s),
            (_, None) => unreachable!("converted on the way in"),
        }
    }

    /// Completes one prefilled sequence in a single encoder pass. The output
    /// is in the input's coordinate system.
    pub fn forward(&self, seq: &MotionSequence, mask: &CompletionMask) -> Result<MotionSequence> {
        let mut out = self.forward_batch(std::slice::from_ref(seq), std::slice::from_ref(mask))?;
        Ok(out.pop().expect("one output per input"))
    }

    /// Completes equal-length sequences together in one encoder pass.
    pub fn forward_batch(&self, seqs: &[MotionSequence], masks: &[CompletionMask]) -> Result<Vec<MotionSequence>> {
        self.run(seqs, masks, None)
    }

    /// [`forward`](Self::forward) that also returns every layer's attention
    /// maps, `[1, heads, T, T]` each.
    pub fn forward_probed(
        &self,
        seq: &MotionSequence,
        mask: &CompletionMask,
    ) -> Result<(MotionSequence, Vec<Tensor<f32>>)> {
        let mut probe = Vec::new();
        let mut out = self.run(std::slice::from_ref(seq), std::slice::from_ref(mask), Some(&mut probe))?;
        Ok((out.pop().expect("one output per input"), probe))
    }

    fn run(
        &self,
        seqs: &[MotionSequence],
        masks: &[CompletionMask],
        probe: Option<&mut Vec<Tensor<f32>>>,
    ) -> Result<Vec<MotionSequence>> {
        if seqs.len() != masks.len() || seqs.is_empty() {
            return Err(Error::DimensionMismatch(format!("{} sequences with {} masks", seqs.len(), masks.len())));
        }
        let cfg = &self.config;
        let stats = self.feature_stats();
        let t = seqs[0].len();
        let mut x = Vec::with_capacity(seqs.len() * t * cfg.input_dim());
        let mut local = Vec::with_capacity(seqs.len());
        for (s, m) in seqs.iter().zip(masks) {
            m.check_len(s.len())?;
            if s.len() != t {
                return Err(Error::DimensionMismatch("sequences in a batch must share a length".into()));
            }
            let s = self.to_model_coord(s)?;
            x.extend(encode::<f32>(&s, Some(m), cfg, &stats)?);
            local.push(s);
        }
        let tape = Tape::new();
        let w = network::Weights::from_vars(&self.params.bind(&tape, false), cfg.layers)?;
        let xv = tape.constant(Tensor::new(vec![seqs.len(), t, cfg.input_dim()], x)?);
        let mask_refs: Vec<&CompletionMask> = masks.iter().collect();
        self.passes.fetch_add(1, Ordering::Relaxed);
        let y = network::network(xv, &mask_refs, &w, cfg, probe)?.value();
        let per = t * cfg.input_dim();
        y.data()
            .chunks_exact(per)
            .zip(local.iter().zip(seqs))
            .map(|(row, (template, orig))| self.back_to_coord(decode(row, template, cfg, &stats)?, orig.coord))
            .collect()
    }
}

#[cfg(test)]
mod tests;
