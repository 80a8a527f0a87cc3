//! Interpolation and zero-velocity baselines, and the interpolation prefill
//! applied to unknown frames before they reach the network.

use crate::error::{Error, Result};
use crate::kinematics::{lerp3, slerp, MotionSequence, Pose};
use crate::mask::{CompletionMask, FrameLabel};

/// Fills every `Unknown` frame: positions are linearly interpolated and
/// rotations spherically interpolated between the nearest keyframes on either
/// side. Unknown frames before the first or after the last keyframe hold the
/// nearest keyframe. Keyframe and ignored frames are copied unchanged.
pub fn fill_unknown(seq: &MotionSequence, mask: &CompletionMask) -> Result<MotionSequence> {
    mask.check_len(seq.len())?;
    let keys: Vec<usize> = mask.frames_with(FrameLabel::Keyframe).collect();
    if keys.is_empty() {
        return Err(Error::NoKeyframes);
    }
    let mut out = seq.clone();
    for t in mask.frames_with(FrameLabel::Unknown) {
        // index of first keyframe after t
        let next = keys.partition_point(|&k| k < t);
        out.frames[t] = match (next.checked_sub(1).map(|i| keys[i]), keys.get(next).copied()) {
            (Some(a), Some(b)) => {
                let w = (t - a) as f64 / (b - a) as f64;
                interpolate_pose(&seq.frames[a], &seq.frames[b], w)
            }
            (Some(a), None) => seq.frames[a].clone(),
            (None, Some(b)) => seq.frames[b].clone(),
            (None, None) => unreachable!("keys is non-empty"),
        };
    }
    Ok(out)
}

pub fn interpolate_pose(a: &Pose, b: &Pose, w: f64) -> Pose {
    Pose {
        positions: a.positions.iter().zip(&b.positions).map(|(p, q)| lerp3(*p, *q, w)).collect(),
        rotations: a.rotations.iter().zip(&b.rotations).map(|(p, q)| slerp(*p, *q, w)).collect(),
    }
}

/// The interpolation baseline.
pub fn interp_baseline(seq: &MotionSequence, mask: &CompletionMask) -> Result<MotionSequence> {
    fill_unknown(seq, mask)
}

/// Every unknown frame repeats the most recent keyframe before it.
pub fn zero_velocity_baseline(seq: &MotionSequence, mask: &CompletionMask) -> Result<MotionSequence> {
    mask.check_len(seq.len())?;
    let mut out = seq.clone();
    let mut last_key = None;
    for (t, label) in mask.labels().iter().enumerate() {
        match label {
            FrameLabel::Keyframe => last_key = Some(t),
            FrameLabel::Unknown => {
                let k = last_key.ok_or(Error::NoPrecedingKeyframe(t))?;
                out.frames[t] = seq.frames[k].clone();
            }
            FrameLabel::Ignored => {}
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use std::f64::consts::FRAC_PI_2;

    use super::*;
    use crate::kinematics::{Coord, Quat};

    fn seq_from(positions: Vec<[f64; 3]>, rotations: Vec<Quat>) -> MotionSequence {
        let frames = positions
            .into_iter()
            .zip(rotations)
            .map(|(p, q)| Pose { positions: vec![p], rotations: vec![q] })
            .collect();
        MotionSequence::new(frames, 30.0, Coord::Global).unwrap()
    }

    fn labels(s: &str) -> CompletionMask {
        CompletionMask::new(
            s.chars()
                .map(|c| match c {
                    'K' => FrameLabel::Keyframe,
                    'U' => FrameLabel::Unknown,
                    _ => FrameLabel::Ignored,
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn midpoint_fill() {
        let seq = seq_from(vec![[0.0; 3], [9.0; 3], [2.0, 0.0, 0.0]], vec![Quat::IDENTITY; 3]);
        let out = fill_unknown(&seq, &labels("KUK")).unwrap();
        assert_eq!(out.frames[1].positions[0], [1.0, 0.0, 0.0]);
    }

    #[test]
    fn all_keyframes_is_identity() {
        let seq = seq_from(vec![[0.0; 3], [5.0; 3], [2.0, 0.0, 0.0]], vec![Quat::IDENTITY; 3]);
        assert_eq!(fill_unknown(&seq, &labels("KKK")).unwrap(), seq);
    }

    #[test]
    fn uniform_steps_between_distant_keys() {
        let axis = [0.3, -0.5, 0.8];
        let end = Quat::from_axis_angle(axis, 2.0);
        let mut pos = vec![[7.0; 3]; 11];
        pos[0] = [0.0, 0.0, 0.0];
        pos[10] = [10.0, -5.0, 2.5];
        let mut rot = vec![Quat::new(0.5, 0.5, 0.5, 0.5); 11];
        rot[0] = Quat::IDENTITY;
        rot[10] = end;
        let seq = seq_from(pos, rot);
        let out = fill_unknown(&seq, &labels("KUUUUUUUUUK")).unwrap();
        for t in 0..=10 {
            let w = t as f64 / 10.0;
            let p = out.frames[t].positions[0];
            assert!(
                (p[0] - 10.0 * w).abs() < 1e-12 && (p[1] + 5.0 * w).abs() < 1e-12 && (p[2] - 2.5 * w).abs() < 1e-12
            );
            // Axis-angle oracle: equal angle steps about the same axis.
            let want = Quat::from_axis_angle(axis, 2.0 * w);
            let got = out.frames[t].rotations[0].align_to(want);
            assert!((got.dot(want) - 1.0).abs() < 1e-12, "t={t}");
        }
    }

    #[test]
    fn edge_rule_holds_nearest_keyframe() {
        let seq = seq_from(vec![[1.0; 3], [2.0; 3], [3.0; 3], [4.0; 3]], vec![Quat::IDENTITY; 4]);
        let out = fill_unknown(&seq, &labels("UKUU")).unwrap();
        assert_eq!(out.frames[0].positions[0], [2.0; 3]);
        assert_eq!(out.frames[3].positions[0], [2.0; 3]);
    }

    #[test]
    fn ignored_frames_untouched() {
        let seq = seq_from(vec![[0.0; 3], [9.0; 3], [2.0; 3], [5.0; 3]], vec![Quat::IDENTITY; 4]);
        let out = fill_unknown(&seq, &labels("KUKI")).unwrap();
        assert_eq!(out.frames[3], seq.frames[3]);
    }

    #[test]
    fn zero_velocity_copies_last_key() {
        let z = Quat::from_axis_angle([0.0, 0.0, 1.0], FRAC_PI_2);
        let seq = seq_from(vec![[0.0; 3], [1.0; 3], [2.0; 3], [3.0; 3], [4.0; 3]], vec![Quat::IDENTITY, z, z, z, z]);
        let out = zero_velocity_baseline(&seq, &labels("KKUUK")).unwrap();
        assert_eq!(out.frames[2], seq.frames[1]);
        assert_eq!(out.frames[3], seq.frames[1]);
        assert_eq!(out.frames[4], seq.frames[4]);
        assert!(matches!(zero_velocity_baseline(&seq, &labels("UKKKK")), Err(Error::NoPrecedingKeyframe(0))));
    }

    #[test]
    fn mask_length_checked() {
        let seq = seq_from(vec![[0.0; 3]; 2], vec![Quat::IDENTITY; 2]);
        assert!(matches!(fill_unknown(&seq, &labels("KUK")), Err(Error::MaskLengthMismatch { .. })));
    }
}
