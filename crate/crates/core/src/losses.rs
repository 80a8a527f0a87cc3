//! Reconstruction and kinematic losses.
//!
//! The `*_term` functions build the losses on a tape from network outputs
//! `[B, T, D]` (standardized feature space, see [`crate::model::encode`]);
//! the free functions over [`MotionSequence`] batches wrap them in `f64`.
//! Every term is an L1 distance averaged over the batch, the non-ignored
//! frames and the joints; ignored frames are never read.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::NormStats;
use crate::kinematics::{Coord, MotionSequence, Skeleton};
use crate::mask::{CompletionMask, FrameLabel};
use crate::model::{encode, ModelConfig};
use crate::tensor::{concat, Real, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub rec: f64,
    pub kin: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { rec: 1.0, kin: 0.01 }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LossTerms<V> {
    pub total: V,
    pub rec: V,
    pub kin: V,
}

/// What the tape terms need besides the tensors.
#[derive(Debug, Clone, Copy)]
pub struct LossSpec<'a> {
    pub cfg: &'a ModelConfig,
    pub stats: &'a NormStats,
    pub skeleton: Option<&'a Skeleton>,
    pub weights: LossWeights,
}

/// Frames that enter the losses.
pub fn active_frames(mask: &CompletionMask) -> Vec<usize> {
    (0..mask.len()).filter(|&t| mask.get(t) != FrameLabel::Ignored).collect()
}

fn dims<T: Real>(y: Var<'_, T>) -> Result<(usize, usize)> {
    match y.shape()[..] {
        [b, t, _] => Ok((b, t)),
        ref s => Err(Error::Shape(format!("loss input must be [B, T, D], got {s:?}"))),
    }
}

fn l1_sum<'t, T: Real>(a: Var<'t, T>, b: Var<'t, T>) -> Result<Var<'t, T>> {
    Ok(a.sub(b)?.abs().sum())
}

/// Reconstruction: positions (root only in local coordinates) plus
/// quaternions, each joint-averaged.
pub fn rec_term<'t, T: Real>(
    y: Var<'t, T>,
    target: Var<'t, T>,
    frames: &[usize],
    cfg: &ModelConfig,
) -> Result<Var<'t, T>> {
    if y.shape() != target.shape() {
        return Err(Error::Shape(format!("prediction {:?} vs target {:?}", y.shape(), target.shape())));
    }
    let (b, _) = dims(y)?;
    let j = cfg.joints;
    let (y, target) = (y.index_select(1, frames)?, target.index_select(1, frames)?);
    let n = (b * frames.len()) as f64;
    let pos_joints = if cfg.coord == Coord::Local { 1 } else { j };
    let pos = l1_sum(y.narrow(2, 0, 3 * pos_joints)?, target.narrow(2, 0, 3 * pos_joints)?)?
        .scale(T::lit(1.0 / (n * pos_joints as f64)));
    if cfg.positions_only {
        return Ok(pos);
    }
    let rot = l1_sum(y.narrow(2, 3 * j, 4 * j)?, target.narrow(2, 3 * j, 4 * j)?)?.scale(T::lit(1.0 / (n * j as f64)));
    pos.add(rot)
}

fn broadcast_rows<T: Real>(shape: &[usize], row: &[f64]) -> Tensor<T> {
    Tensor::from_fn(shape, |i| T::lit(row[i % row.len()]))
}

/// Raw-unit positions `[B, T', J, 3]` and unit quaternions `[B, T', J, 4]`
/// of the selected frames.
fn unpack<'t, T: Real>(
    tape: &'t Tape<T>,
    y: Var<'t, T>,
    frames: &[usize],
    spec: &LossSpec<'_>,
) -> Result<(Var<'t, T>, Var<'t, T>)> {
    let (b, _) = dims(y)?;
    let (j, tn) = (spec.cfg.joints, frames.len());
    if spec.cfg.positions_only {
        return Err(Error::Config("kinematic losses need rotations".into()));
    }
    let y = y.index_select(1, frames)?;
    let std: Vec<f64> = spec.stats.std.iter().flatten().copied().collect();
    let mean: Vec<f64> = spec.stats.mean.iter().flatten().copied().collect();
    let shape = [b, tn, 3 * j];
    let pos = y
        .narrow(2, 0, 3 * j)?
        .mul(tape.constant(broadcast_rows(&shape, &std)))?
        .add(tape.constant(broadcast_rows(&shape, &mean)))?
        .reshape(&[b, tn, j, 3])?;
    let rot = y.narrow(2, 3 * j, 4 * j)?.reshape(&[b, tn, j, 4])?.normalize_last()?;
    Ok((pos, rot))
}

fn skeleton<'a>(spec: &LossSpec<'a>) -> Result<&'a Skeleton> {
    let s = spec.skeleton.ok_or_else(|| Error::Config("kinematic losses need a skeleton".into()))?;
    if s.num_joints() != spec.cfg.joints {
        return Err(Error::DimensionMismatch(format!(
            "skeleton has {} joints, model {}",
            s.num_joints(),
            spec.cfg.joints
        )));
    }
    Ok(s)
}

/// Forward kinematics of local predictions (root position plus local
/// rotations, skeleton offsets) against ground-truth global positions
/// `[B, T', J, 3]` of the same frames.
pub fn fk_term<'t, T: Real>(
    tape: &'t Tape<T>,
    y: Var<'t, T>,
    gt_global: Var<'t, T>,
    frames: &[usize],
    spec: &LossSpec<'_>,
) -> Result<Var<'t, T>> {
    let skel = skeleton(spec)?;
    let (b, _) = dims(y)?;
    let (j, tn) = (spec.cfg.joints, frames.len());
    if gt_global.shape() != [b, tn, j, 3] {
        return Err(Error::Shape(format!("fk target {:?}, expected {:?}", gt_global.shape(), [b, tn, j, 3])));
    }
    let (pos, rot) = unpack(tape, y, frames, spec)?;
    let mut g_rot = vec![rot.narrow(2, 0, 1)?];
    let mut g_pos = vec![pos.narrow(2, 0, 1)?];
    for k in 1..j {
        let p = skel.parents[k].expect("validated skeleton");
        let offset = tape.constant(broadcast_rows(&[b, tn, 1, 3], &skel.offsets[k]));
        g_pos.push(g_pos[p].add(g_rot[p].quat_rotate(offset)?)?);
        g_rot.push(g_rot[p].quat_mul(rot.narrow(2, k, 1)?)?);
    }
    let fk = concat(&g_pos, 2)?;
    Ok(l1_sum(fk, gt_global)?.scale(T::lit(1.0 / (b * tn * j) as f64)))
}

/// Bone offsets recovered from global predictions against the skeleton's,
/// averaged over the non-root joints.
pub fn ik_term<'t, T: Real>(
    tape: &'t Tape<T>,
    y: Var<'t, T>,
    frames: &[usize],
    spec: &LossSpec<'_>,
) -> Result<Var<'t, T>> {
    let skel = skeleton(spec)?;
    let (b, _) = dims(y)?;
    let (j, tn) = (spec.cfg.joints, frames.len());
    if j < 2 {
        return Ok(tape.constant(Tensor::scalar(T::zero())));
    }
    let (pos, rot) = unpack(tape, y, frames, spec)?;
    let conj = tape.constant(broadcast_rows(&[b, tn, 1, 4], &[-1.0, -1.0, -1.0, 1.0]));
    let mut total: Option<Var<'t, T>> = None;
    for k in 1..j {
        let p = skel.parents[k].expect("validated skeleton");
        let inv = rot.narrow(2, p, 1)?.mul(conj)?;
        let bone = pos.narrow(2, k, 1)?.sub(pos.narrow(2, p, 1)?)?;
        let target = tape.constant(broadcast_rows(&[b, tn, 1, 3], &skel.offsets[k]));
        let term = l1_sum(inv.quat_rotate(bone)?, target)?;
        total = Some(match total {
            Some(t) => t.add(term)?,
            None => term,
        });
    }
    Ok(total.expect("j >= 2").scale(T::lit(1.0 / (b * tn * (j - 1)) as f64)))
}

/// `w.rec * rec + w.kin * kin`, where the kinematic term is FK in local
/// coordinates (needs `gt_global`) and IK in global coordinates. The
/// kinematic term is zero in positions-only mode.
pub fn total_terms<'t, T: Real>(
    tape: &'t Tape<T>,
    y: Var<'t, T>,
    target: Var<'t, T>,
    gt_global: Option<Var<'t, T>>,
    frames: &[usize],
    spec: &LossSpec<'_>,
) -> Result<LossTerms<Var<'t, T>>> {
    let rec = rec_term(y, target, frames, spec.cfg)?;
    let kin = if spec.cfg.positions_only {
        tape.constant(Tensor::scalar(T::zero()))
    } else {
        match spec.cfg.coord {
            Coord::Local => {
                let gt = gt_global.ok_or_else(|| Error::Config("fk loss needs global targets".into()))?;
                fk_term(tape, y, gt, frames, spec)?
            }
            Coord::Global => ik_term(tape, y, frames, spec)?,
        }
    };
    let total = rec.scale(T::lit(spec.weights.rec)).add(kin.scale(T::lit(spec.weights.kin)))?;
    Ok(LossTerms { total, rec, kin })
}

/// Global positions of the selected frames, `[B * T' * J * 3]` values.
pub fn global_positions<T: Real>(seqs: &[MotionSequence], frames: &[usize], skel: &Skeleton) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for s in seqs {
        let g = s.to_global(skel)?;
        for &t in frames {
            out.extend(g.frames[t].positions.iter().flatten().map(|&v| T::lit(v)));
        }
    }
    Ok(out)
}

fn batch_cfg(seqs: &[MotionSequence], mask: &CompletionMask) -> Result<ModelConfig> {
    let first = seqs.first().ok_or(Error::EmptyDataset)?;
    for s in seqs {
        mask.check_len(s.len())?;
        if s.num_joints() != first.num_joints() || s.coord != first.coord {
            return Err(Error::Shape("sequences in a batch must share joints and coordinates".into()));
        }
    }
    Ok(ModelConfig { joints: first.num_joints(), t_max: first.len(), coord: first.coord, ..Default::default() })
}

fn features(seqs: &[MotionSequence], cfg: &ModelConfig, stats: &NormStats) -> Result<Tensor<f64>> {
    let mut data = Vec::new();
    for s in seqs {
        data.extend(encode::<f64>(s, None, cfg, stats)?);
    }
    Tensor::new(vec![seqs.len(), cfg.t_max, cfg.input_dim()], data)
}

fn aligned(pred: &[MotionSequence], gt: &[MotionSequence]) -> Vec<MotionSequence> {
    pred.iter()
        .zip(gt)
        .map(|(p, g)| {
            let mut p = p.clone();
            for (pf, gf) in p.frames.iter_mut().zip(&g.frames) {
                for (q, r) in pf.rotations.iter_mut().zip(&gf.rotations) {
                    *q = q.align_to(*r);
                }
            }
            p
        })
        .collect()
}

fn check_pair(pred: &[MotionSequence], gt: &[MotionSequence]) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(Error::Shape(format!("{} predictions for {} targets", pred.len(), gt.len())));
    }
    for (p, g) in pred.iter().zip(gt) {
        if p.len() != g.len() || p.num_joints() != g.num_joints() || p.coord != g.coord {
            return Err(Error::Shape("prediction and target differ in length, joints or coordinates".into()));
        }
    }
    Ok(())
}

/// Reconstruction loss of a batch sharing one mask. Positions are
/// standardized by `stats`; quaternions are hemisphere-aligned to the target
/// first.
pub fn rec_loss(
    pred: &[MotionSequence],
    gt: &[MotionSequence],
    mask: &CompletionMask,
    stats: &NormStats,
) -> Result<f64> {
    check_pair(pred, gt)?;
    let cfg = batch_cfg(gt, mask)?;
    let tape = Tape::new();
    let y = tape.constant(features(&aligned(pred, gt), &cfg, stats)?);
    let t = tape.constant(features(gt, &cfg, stats)?);
    Ok(rec_term(y, t, &active_frames(mask), &cfg)?.item())
}

/// FK loss of local predictions against the targets' global positions, in
/// raw position units.
pub fn fk_loss(
    pred_local: &[MotionSequence],
    gt: &[MotionSequence],
    mask: &CompletionMask,
    skel: &Skeleton,
) -> Result<f64> {
    let cfg = batch_cfg(pred_local, mask)?;
    if cfg.coord != Coord::Local {
        return Err(Error::Config("fk loss expects local predictions".into()));
    }
    let frames = active_frames(mask);
    let stats = NormStats::identity(cfg.joints);
    let spec = LossSpec { cfg: &cfg, stats: &stats, skeleton: Some(skel), weights: LossWeights::default() };
    let tape = Tape::new();
    let y = tape.constant(features(pred_local, &cfg, &stats)?);
    let g = Tensor::new(vec![gt.len(), frames.len(), cfg.joints, 3], global_positions(gt, &frames, skel)?)?;
    Ok(fk_term(&tape, y, tape.constant(g), &frames, &spec)?.item())
}

/// IK loss of global predictions against the skeleton's offsets, in raw
/// position units.
pub fn ik_loss(pred_global: &[MotionSequence], mask: &CompletionMask, skel: &Skeleton) -> Result<f64> {
    let cfg = batch_cfg(pred_global, mask)?;
    if cfg.coord != Coord::Global {
        return Err(Error::Config("ik loss expects global predictions".into()));
    }
    let stats = NormStats::identity(cfg.joints);
    let spec = LossSpec { cfg: &cfg, stats: &stats, skeleton: Some(skel), weights: LossWeights::default() };
    let tape = Tape::new();
    let y = tape.constant(features(pred_global, &cfg, &stats)?);
    Ok(ik_term(&tape, y, &active_frames(mask), &spec)?.item())
}

/// Weighted sum of [`rec_loss`] and the kinematic loss matching the
/// predictions' coordinate system.
pub fn total_loss(
    pred: &[MotionSequence],
    gt: &[MotionSequence],
    mask: &CompletionMask,
    skel: &Skeleton,
    stats: &NormStats,
    weights: LossWeights,
) -> Result<LossTerms<f64>> {
    check_pair(pred, gt)?;
    let cfg = batch_cfg(gt, mask)?;
    let frames = active_frames(mask);
    let spec = LossSpec { cfg: &cfg, stats, skeleton: Some(skel), weights };
    let tape = Tape::new();
    let y = tape.constant(features(&aligned(pred, gt), &cfg, stats)?);
    let t = tape.constant(features(gt, &cfg, stats)?);
    let g = Tensor::new(vec![gt.len(), frames.len(), cfg.joints, 3], global_positions(gt, &frames, skel)?)?;
    let terms = total_terms(&tape, y, t, Some(tape.constant(g)), &frames, &spec)?;
    Ok(LossTerms { total: terms.total.item(), rec: terms.rec.item(), kin: terms.kin.item() })
}

#[cfg(test)]
mod tests;
