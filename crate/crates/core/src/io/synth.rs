//! Deterministic band-limited motion for tests and desk-scale experiments.
//!
//! Every joint's rotation vector is a constant bias plus one to three
//! sinusoids per axis; the root drifts at a constant velocity with a
//! sinusoidal sway. Amplitudes and frequencies are bounded by the constants
//! below, which bound the joint speeds.

use std::f64::consts::TAU;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::kinematics::{Coord, MotionSequence, Pose, Quat, Skeleton, Vec3};

pub const FRAME_RATE: f64 = 30.0;
/// Largest amplitude of a single rotation sinusoid, radians.
pub const MAX_AMPLITUDE: f64 = 0.35;
pub const MIN_FREQUENCY: f64 = 0.2;
pub const MAX_FREQUENCY: f64 = 1.2;
pub const MAX_SINUSOIDS: usize = 3;
pub const MAX_ROOT_SPEED: f64 = 0.8;
pub const MAX_ROOT_SWAY: f64 = 0.15;

/// Upper bound on any joint's local angular speed, rad/s.
pub fn rotation_speed_budget() -> f64 {
    // per-axis derivative bound, over three axes
    3f64.sqrt() * MAX_SINUSOIDS as f64 * MAX_AMPLITUDE * TAU * MAX_FREQUENCY
}

/// Upper bound on the root's linear speed, units/s.
pub fn root_speed_budget() -> f64 {
    3f64.sqrt() * (MAX_ROOT_SPEED + MAX_SINUSOIDS as f64 * MAX_ROOT_SWAY * TAU * MAX_FREQUENCY)
}

/// A fixed tree with `joints` joints: joint `j > 0` hangs off `(j - 1) / 2`.
pub fn synth_skeleton(joints: usize) -> Skeleton {
    let joints = joints.max(1);
    let parents = (0..joints).map(|j| if j == 0 { None } else { Some((j - 1) / 2) }).collect();
    let offsets = (0..joints)
        .map(|j| {
            if j == 0 {
                return [0.0; 3];
            }
            let a = j as f64 * 2.399_963; // golden angle
            let len = 0.2 + 0.05 * (j % 4) as f64;
            let up = if j % 3 == 0 { -0.6 } else { 0.7 };
            let d = [a.cos() * 0.6, up, a.sin() * 0.6];
            let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
            d.map(|v| v * len / n)
        })
        .collect();
    let names = (0..joints).map(|j| format!("joint{j}")).collect();
    Skeleton::new(parents, offsets, names).expect("valid tree")
}

struct Wave {
    amp: f64,
    freq: f64,
    phase: f64,
}

impl Wave {
    fn random(rng: &mut ChaCha8Rng, max_amp: f64) -> Self {
        Wave {
            amp: rng.random_range(0.2 * max_amp..max_amp),
            freq: rng.random_range(MIN_FREQUENCY..MAX_FREQUENCY),
            phase: rng.random_range(0.0..TAU),
        }
    }

    fn at(&self, seconds: f64) -> f64 {
        self.amp * (TAU * self.freq * seconds + self.phase).sin()
    }
}

fn waves(rng: &mut ChaCha8Rng, max_amp: f64) -> Vec<Wave> {
    let n = rng.random_range(1..=MAX_SINUSOIDS);
    (0..n).map(|_| Wave::random(rng, max_amp)).collect()
}

/// A local-coordinate sequence on [`synth_skeleton`]`(joints)`, identical for
/// identical `(seed, frames, joints)`.
pub fn synth_motion(seed: u64, frames: usize, joints: usize) -> MotionSequence {
    let skel = synth_skeleton(joints);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rot_waves: Vec<[(f64, Vec<Wave>); 3]> = (0..joints)
        .map(|j| {
            let scale = if j == 0 { 0.5 } else { 1.0 };
            [0, 1, 2].map(|_| (rng.random_range(-0.3..0.3) * scale, waves(&mut rng, MAX_AMPLITUDE * scale)))
        })
        .collect();
    let velocity: Vec3 =
        [rng.random_range(-MAX_ROOT_SPEED..MAX_ROOT_SPEED), 0.0, rng.random_range(-MAX_ROOT_SPEED..MAX_ROOT_SPEED)];
    let start: Vec3 = [rng.random_range(-1.0..1.0), 1.0, rng.random_range(-1.0..1.0)];
    let sway: [Vec<Wave>; 3] =
        [0, 1, 2].map(|k| waves(&mut rng, if k == 1 { 0.3 * MAX_ROOT_SWAY } else { MAX_ROOT_SWAY }));

    let frames = (0..frames)
        .map(|t| {
            let s = t as f64 / FRAME_RATE;
            let rotations = rot_waves
                .iter()
                .map(|axes| {
                    let r = std::array::from_fn(|k| axes[k].0 + axes[k].1.iter().map(|w| w.at(s)).sum::<f64>());
                    Quat::from_rotation_vector(r)
                })
                .collect();
            let mut positions = skel.offsets.clone();
            positions[0] = [0, 1, 2].map(|k| start[k] + velocity[k] * s + sway[k].iter().map(|w| w.at(s)).sum::<f64>());
            Pose { positions, rotations }
        })
        .collect();
    MotionSequence::new(frames, FRAME_RATE, Coord::Local).expect("consistent joints")
}

/// `count` sequences with seeds `seed, seed + 1, ...`.
pub fn synth_corpus(seed: u64, count: usize, frames: usize, joints: usize) -> (Skeleton, Vec<MotionSequence>) {
    let seqs = (0..count as u64).map(|i| synth_motion(seed.wrapping_add(i), frames, joints)).collect();
    (synth_skeleton(joints), seqs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::{norm3, sub3};

    #[test]
    fn deterministic_per_seed() {
        assert_eq!(synth_motion(3, 40, 5), synth_motion(3, 40, 5));
        let (a, b) = (synth_motion(3, 40, 5), synth_motion(4, 40, 5));
        let diff = a
            .frames
            .iter()
            .zip(&b.frames)
            .flat_map(|(x, y)| x.rotations.iter().zip(&y.rotations).map(|(p, q)| (p.dot(*q).abs() - 1.0).abs()))
            .fold(0.0, f64::max);
        assert!(diff > 0.0);
    }

    #[test]
    fn unit_quaternions_and_skeleton_offsets() {
        let seq = synth_motion(1, 30, 8);
        let skel = synth_skeleton(8);
        for f in &seq.frames {
            assert!(f.rotations.iter().all(|q| (q.norm() - 1.0).abs() < 1e-12));
            assert_eq!(&f.positions[1..], &skel.offsets[1..]);
        }
    }

    #[test]
    fn speeds_within_budget() {
        let budget = rotation_speed_budget();
        let root_budget = root_speed_budget();
        for seed in 0..20 {
            let seq = synth_motion(seed, 120, 6);
            for w in seq.frames.windows(2) {
                for j in 0..6 {
                    let (a, b) = (w[0].rotations[j], w[1].rotations[j].align_to(w[0].rotations[j]));
                    let angle = 2.0 * a.dot(b).clamp(-1.0, 1.0).acos();
                    assert!(angle * FRAME_RATE <= budget, "seed {seed} joint {j}: {}", angle * FRAME_RATE);
                }
                let v = norm3(sub3(w[1].positions[0], w[0].positions[0])) * FRAME_RATE;
                assert!(v <= root_budget);
            }
        }
    }
}
