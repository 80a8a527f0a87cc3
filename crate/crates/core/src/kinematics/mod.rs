//! Skeletons, poses and the forward/inverse kinematics that move between
//! local (root position + per-joint local rotations) and global
//! (per-joint world positions + world rotations) representations.
//!
//! All kinematics run in `f64`.

mod quat;

use serde::{Deserialize, Serialize};

pub use quat::{add3, cross, lerp3, norm3, slerp, sub3, Axis, EulerOrder, Mat3, Quat, Vec3};

use crate::error::{shape_err, Result};

/// Joint hierarchy with constant bone offsets (the T-pose).
///
/// Joints are stored in topological order: `parents[0]` is `None` and every
/// other joint's parent has a smaller index. The root offset is the zero
/// vector; the root carries its translation through the root position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Skeleton {
    pub parents: Vec<Option<usize>>,
    pub offsets: Vec<Vec3>,
    pub names: Vec<String>,
}

impl Skeleton {
    pub fn new(parents: Vec<Option<usize>>, offsets: Vec<Vec3>, names: Vec<String>) -> Result<Self> {
        let n = parents.len();
        if n == 0 {
            return Err(shape_err("skeleton needs at least one joint"));
        }
        if offsets.len() != n || names.len() != n {
            return Err(shape_err(format!(
                "skeleton has {n} parents, {} offsets and {} names",
                offsets.len(),
                names.len()
            )));
        }
        if parents[0].is_some() {
            return Err(shape_err("joint 0 must be the root"));
        }
        for (j, p) in parents.iter().enumerate().skip(1) {
            match p {
                Some(p) if *p < j => {}
                _ => return Err(shape_err(format!("joint {j} has parent {p:?}; parents must precede children"))),
            }
        }
        if offsets[0] != [0.0; 3] {
            return Err(shape_err("root offset must be zero"));
        }
        Ok(Self { parents, offsets, names })
    }

    /// A serial chain with the given bone offsets (the root offset is implied).
    pub fn chain(bones: &[Vec3]) -> Self {
        let n = bones.len() + 1;
        let parents = (0..n).map(|j| j.checked_sub(1)).collect();
        let mut offsets = vec![[0.0; 3]];
        offsets.extend_from_slice(bones);
        let names = (0..n).map(|j| format!("joint{j}")).collect();
        Self { parents, offsets, names }
    }

    pub fn num_joints(&self) -> usize {
        self.parents.len()
    }

    pub fn children(&self, joint: usize) -> impl Iterator<Item = usize> + '_ {
        self.parents.iter().enumerate().filter(move |(_, p)| **p == Some(joint)).map(|(j, _)| j)
    }

    fn check(&self, what: &str, len: usize) -> Result<()> {
        if len != self.num_joints() {
            return Err(shape_err(format!("{what} has {len} joints, skeleton has {}", self.num_joints())));
        }
        Ok(())
    }
}

/// Positions and rotations of every joint at one instant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub positions: Vec<Vec3>,
    pub rotations: Vec<Quat>,
}

impl Pose {
    pub fn num_joints(&self) -> usize {
        self.positions.len()
    }

    pub fn identity(joints: usize) -> Self {
        Self { positions: vec![[0.0; 3]; joints], rotations: vec![Quat::IDENTITY; joints] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Coord {
    /// `positions[0]` is the root position, `positions[j]` for `j > 0` the
    /// bone offset; rotations are relative to the parent.
    Local,
    /// World-space positions and rotations for every joint.
    Global,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionSequence {
    pub frames: Vec<Pose>,
    pub frame_rate: f64,
    pub coord: Coord,
}

impl MotionSequence {
    pub fn new(frames: Vec<Pose>, frame_rate: f64, coord: Coord) -> Result<Self> {
        if let Some(first) = frames.first() {
            let j = first.num_joints();
            for (t, f) in frames.iter().enumerate() {
                if f.positions.len() != j || f.rotations.len() != j {
                    return Err(shape_err(format!("frame {t} does not have {j} joints")));
                }
            }
        }
        Ok(Self { frames, frame_rate, coord })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn num_joints(&self) -> usize {
        self.frames.first().map_or(0, Pose::num_joints)
    }

    /// Frames `start..start + len` as a new sequence.
    pub fn slice(&self, start: usize, len: usize) -> MotionSequence {
        MotionSequence {
            frames: self.frames[start..start + len].to_vec(),
            frame_rate: self.frame_rate,
            coord: self.coord,
        }
    }

    /// Converts to global coordinates (no-op when already global).
    pub fn to_global(&self, skel: &Skeleton) -> Result<MotionSequence> {
        if self.coord == Coord::Global {
            return Ok(self.clone());
        }
        let frames = self
            .frames
            .iter()
            .map(|f| {
                skel.check("pose", f.num_joints())?;
                let (positions, rotations) = fk_with_offsets(skel, f.positions[0], &f.rotations, &f.positions)?;
                Ok(Pose { positions, rotations })
            })
            .collect::<Result<_>>()?;
        Ok(MotionSequence { frames, frame_rate: self.frame_rate, coord: Coord::Global })
    }

    /// Converts to local coordinates. Bone offsets come from the global
    /// positions, so the conversion is exact even for stretched bones.
    pub fn to_local(&self, skel: &Skeleton) -> Result<MotionSequence> {
        if self.coord == Coord::Local {
            return Ok(self.clone());
        }
        let frames = self
            .frames
            .iter()
            .map(|f| {
                let local = ik(&f.positions, &f.rotations, skel)?;
                let mut positions = local.offsets;
                positions[0] = local.root_pos;
                Ok(Pose { positions, rotations: local.local_rots })
            })
            .collect::<Result<_>>()?;
        Ok(MotionSequence { frames, frame_rate: self.frame_rate, coord: Coord::Local })
    }

    /// Flips quaternion signs so every joint's track starts with `w >= 0` and
    /// never crosses hemispheres between consecutive frames.
    pub fn with_continuous_rotations(&self) -> MotionSequence {
        let mut out = self.clone();
        for t in 0..out.frames.len() {
            for j in 0..out.num_joints() {
                let reference = if t == 0 { Quat::IDENTITY } else { out.frames[t - 1].rotations[j] };
                out.frames[t].rotations[j] = out.frames[t].rotations[j].align_to(reference);
            }
        }
        out
    }
}

/// Forward kinematics with the skeleton's own bone offsets.
pub fn fk(skel: &Skeleton, root_pos: Vec3, local_rots: &[Quat]) -> Result<(Vec<Vec3>, Vec<Quat>)> {
    fk_with_offsets(skel, root_pos, local_rots, &skel.offsets)
}

/// Forward kinematics with per-pose bone offsets (row 0 is ignored).
pub fn fk_with_offsets(
    skel: &Skeleton,
    root_pos: Vec3,
    local_rots: &[Quat],
    offsets: &[Vec3],
) -> Result<(Vec<Vec3>, Vec<Quat>)> {
    skel.check("local rotations", local_rots.len())?;
    skel.check("offsets", offsets.len())?;
    let n = skel.num_joints();
    let mut pos = Vec::with_capacity(n);
    let mut rot = Vec::with_capacity(n);
    pos.push(root_pos);
    rot.push(local_rots[0]);
    for j in 1..n {
        let p = skel.parents[j].expect("validated skeleton");
        rot.push(rot[p] * local_rots[j]);
        pos.push(add3(pos[p], rot[p].rotate(offsets[j])));
    }
    Ok((pos, rot))
}

/// Output of [`ik`]: the local representation recovered from a global pose.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalPose {
    pub root_pos: Vec3,
    pub local_rots: Vec<Quat>,
    /// Recovered bone offsets; row 0 is zero.
    pub offsets: Vec<Vec3>,
}

/// Global-to-local transformation, the exact inverse of [`fk_with_offsets`].
pub fn ik(global_pos: &[Vec3], global_rots: &[Quat], skel: &Skeleton) -> Result<LocalPose> {
    skel.check("global positions", global_pos.len())?;
    skel.check("global rotations", global_rots.len())?;
    let n = skel.num_joints();
    let mut local_rots = Vec::with_capacity(n);
    let mut offsets = Vec::with_capacity(n);
    local_rots.push(global_rots[0]);
    offsets.push([0.0; 3]);
    for j in 1..n {
        let p = skel.parents[j].expect("validated skeleton");
        let inv = global_rots[p].conj();
        local_rots.push(inv * global_rots[j]);
        offsets.push(inv.rotate(sub3(global_pos[j], global_pos[p])));
    }
    Ok(LocalPose { root_pos: global_pos[0], local_rots, offsets })
}

/// Replaces each frame's bone offsets with the skeleton's and re-runs FK, so
/// bone lengths match the skeleton exactly.
pub fn standardize_tpose(seq: &MotionSequence, skel: &Skeleton) -> Result<MotionSequence> {
    let global = seq.to_global(skel)?;
    let frames = global
        .frames
        .iter()
        .map(|f| {
            let local = ik(&f.positions, &f.rotations, skel)?;
            let (positions, rotations) = fk(skel, local.root_pos, &local.local_rots)?;
            Ok(Pose { positions, rotations })
        })
        .collect::<Result<_>>()?;
    Ok(MotionSequence { frames, frame_rate: seq.frame_rate, coord: Coord::Global })
}

/// `[p, q]`: all positions row-major followed by all quaternions `(x, y, z, w)`.
pub fn flatten_pose(pose: &Pose) -> Vec<f64> {
    let mut out = Vec::with_capacity(pose.num_joints() * 7);
    for p in &pose.positions {
        out.extend_from_slice(p);
    }
    for q in &pose.rotations {
        out.extend_from_slice(&q.to_array());
    }
    out
}

pub fn unflatten_pose(x: &[f64], joints: usize) -> Result<Pose> {
    if x.len() != joints * 7 {
        return Err(shape_err(format!("pose vector has {} values, expected {}", x.len(), joints * 7)));
    }
    let (p, q) = x.split_at(joints * 3);
    Ok(Pose {
        positions: p.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect(),
        rotations: q.chunks_exact(4).map(|c| Quat::new(c[0], c[1], c[2], c[3])).collect(),
    })
}
