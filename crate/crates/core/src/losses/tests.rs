use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::io::{synth_motion, synth_skeleton};
use crate::kinematics::{fk, norm3, Pose, Quat};
use crate::tensor::gradcheck::check;

fn mask(s: &str) -> CompletionMask {
    CompletionMask::from_indices(&s.chars().map(|c| "KUI".find(c).unwrap()).collect::<Vec<_>>()).unwrap()
}

fn random_quat(rng: &mut ChaCha8Rng) -> Quat {
    Quat::new(
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
    )
    .normalize()
    .unwrap()
}

fn random_global(rng: &mut ChaCha8Rng, frames: usize, joints: usize) -> MotionSequence {
    let frames = (0..frames)
        .map(|_| Pose {
            positions: (0..joints).map(|_| [0, 1, 2].map(|_| rng.random_range(-2.0..2.0))).collect(),
            rotations: (0..joints).map(|_| random_quat(rng)).collect(),
        })
        .collect();
    MotionSequence::new(frames, 30.0, Coord::Global).unwrap()
}

fn random_stats(rng: &mut ChaCha8Rng, joints: usize) -> NormStats {
    NormStats {
        joints,
        mean: (0..joints).map(|_| [0, 1, 2].map(|_| rng.random_range(-1.0..1.0))).collect(),
        std: (0..joints).map(|_| [0, 1, 2].map(|_| rng.random_range(0.5..2.0))).collect(),
    }
}

#[test]
fn zero_on_exact_predictions() {
    let skel = synth_skeleton(5);
    let local = vec![synth_motion(1, 12, 5), synth_motion(2, 12, 5)];
    let global: Vec<_> = local.iter().map(|s| s.to_global(&skel).unwrap()).collect();
    let m = mask("KKUUUUUKIIII");
    let stats = NormStats::identity(5);
    assert_eq!(rec_loss(&local, &local, &m, &stats).unwrap(), 0.0);
    assert_eq!(rec_loss(&global, &global, &m, &stats).unwrap(), 0.0);
    assert!(fk_loss(&local, &global, &m, &skel).unwrap() < 1e-5);
    assert!(ik_loss(&global, &m, &skel).unwrap() < 1e-5);
    let t = total_loss(&local, &local, &m, &skel, &stats, LossWeights::default()).unwrap();
    assert!(t.total < 1e-5);
}

#[test]
fn unit_position_error() {
    let gt = MotionSequence::new(vec![Pose::identity(1)], 30.0, Coord::Global).unwrap();
    let mut pred = gt.clone();
    pred.frames[0].positions[0] = [1.0, 0.0, 0.0];
    let stats = NormStats::identity(1);
    assert_eq!(rec_loss(&[pred], &[gt.clone()], &mask("K"), &stats).unwrap(), 1.0);

    // N = 2, T = 2, one entry off
    let gt2 = MotionSequence::new(vec![Pose::identity(1); 2], 30.0, Coord::Global).unwrap();
    let mut off = gt2.clone();
    off.frames[1].positions[0] = [1.0, 0.0, 0.0];
    let l = rec_loss(&[off, gt2.clone()], &[gt2.clone(), gt2], &mask("KU"), &stats).unwrap();
    assert_eq!(l, 0.25);
}

fn rec_oracle(pred: &[MotionSequence], gt: &[MotionSequence], m: &CompletionMask, stats: &NormStats) -> f64 {
    let mut total = 0.0;
    let mut n = 0.0;
    for (p, g) in pred.iter().zip(gt) {
        for t in 0..m.len() {
            if m.get(t) == FrameLabel::Ignored {
                continue;
            }
            n += 1.0;
            let (pf, gf) = (&p.frames[t], &g.frames[t]);
            let joints = gf.positions.len();
            let pos_joints = if g.coord == Coord::Local { 1 } else { joints };
            let mut pos = 0.0;
            for j in 0..pos_joints {
                let (a, b) = (stats.normalize(j, pf.positions[j]), stats.normalize(j, gf.positions[j]));
                for k in 0..3 {
                    pos += (a[k] - b[k]).abs();
                }
            }
            let mut rot = 0.0;
            for j in 0..joints {
                let q = pf.rotations[j];
                let r = gf.rotations[j];
                let q = if q.dot(r) < 0.0 { -q } else { q };
                rot += (q.x - r.x).abs() + (q.y - r.y).abs() + (q.z - r.z).abs() + (q.w - r.w).abs();
            }
            total += pos / pos_joints as f64 + rot / joints as f64;
        }
    }
    total / n
}

#[test]
fn rec_matches_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let m = mask("KKUUUKUI");
    for case in 0..20 {
        let joints = 1 + case % 4;
        let stats = random_stats(&mut rng, joints);
        let gt: Vec<_> = (0..3).map(|_| random_global(&mut rng, 8, joints)).collect();
        let pred: Vec<_> = (0..3).map(|_| random_global(&mut rng, 8, joints)).collect();
        let got = rec_loss(&pred, &gt, &m, &stats).unwrap();
        assert!((got - rec_oracle(&pred, &gt, &m, &stats)).abs() < 1e-6);

        let as_local = |s: &MotionSequence| MotionSequence { coord: Coord::Local, ..s.clone() };
        let (pl, gl): (Vec<_>, Vec<_>) = pred.iter().zip(&gt).map(|(p, g)| (as_local(p), as_local(g))).unzip();
        let got = rec_loss(&pl, &gl, &m, &stats).unwrap();
        assert!((got - rec_oracle(&pl, &gl, &m, &stats)).abs() < 1e-6);
    }
}

#[test]
fn rec_ignores_hemisphere() {
    let gt = vec![synth_motion(4, 6, 3)];
    let mut pred = gt.clone();
    pred[0].frames[2].rotations[1] = -pred[0].frames[2].rotations[1];
    assert_eq!(rec_loss(&pred, &gt, &mask("KUUUUK"), &NormStats::identity(3)).unwrap(), 0.0);
}

#[test]
fn fk_loss_cases() {
    let skel = synth_skeleton(6);
    let m = mask("KUUUUUUK");
    let gt_local = synth_motion(5, 8, 6);
    let gt = gt_local.to_global(&skel).unwrap();
    let pred = gt.to_local(&skel).unwrap();
    assert!(fk_loss(&[pred.clone()], &[gt.clone()], &m, &skel).unwrap() < 1e-5);

    let mut shifted = pred.clone();
    shifted.frames.iter_mut().for_each(|f| f.positions[0][2] += 1.0);
    assert!((fk_loss(&[shifted], &[gt.clone()], &m, &skel).unwrap() - 1.0).abs() < 1e-9);

    // fk-then-L1 oracle
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..10 {
        let mut p = pred.clone();
        for f in &mut p.frames {
            for q in &mut f.rotations {
                *q = (*q * Quat::from_rotation_vector([0, 1, 2].map(|_| rng.random_range(-0.5..0.5))))
                    .normalize()
                    .unwrap();
            }
            f.positions[0] = [0, 1, 2].map(|k| f.positions[0][k] + rng.random_range(-0.3..0.3));
        }
        let mut want = 0.0;
        for (f, g) in p.frames.iter().zip(&gt.frames) {
            let (pos, _) = fk(&skel, f.positions[0], &f.rotations).unwrap();
            for (a, b) in pos.iter().zip(&g.positions) {
                want += (0..3).map(|k| (a[k] - b[k]).abs()).sum::<f64>();
            }
        }
        want /= (8 * 6) as f64;
        assert!((fk_loss(&[p], &[gt.clone()], &m, &skel).unwrap() - want).abs() < 1e-6);
    }
}

#[test]
fn ik_loss_cases() {
    let skel = Skeleton::chain(&[[1.0, 0.0, 0.0]]);
    let ok = MotionSequence::new(
        vec![Pose { positions: vec![[0.0; 3], [1.0, 0.0, 0.0]], rotations: vec![Quat::IDENTITY; 2] }; 3],
        30.0,
        Coord::Global,
    )
    .unwrap();
    assert_eq!(ik_loss(&[ok.clone()], &mask("KUK"), &skel).unwrap(), 0.0);
    let mut stretched = ok.clone();
    stretched.frames.iter_mut().for_each(|f| f.positions[1] = [2.0, 0.0, 0.0]);
    assert_eq!(ik_loss(&[stretched], &mask("KUK"), &skel).unwrap(), 1.0);

    let skel = synth_skeleton(7);
    let g = synth_motion(6, 10, 7).to_global(&skel).unwrap();
    assert!(ik_loss(&[g], &mask("KUUUUUUUUK"), &skel).unwrap() < 1e-5);
}

#[test]
fn kinematic_weight_zero_is_pure_reconstruction() {
    let skel = synth_skeleton(4);
    let m = mask("KKUUUUKI");
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let stats = random_stats(&mut rng, 4);
    for coord in [Coord::Local, Coord::Global] {
        let to = |s: MotionSequence| if coord == Coord::Local { s } else { s.to_global(&skel).unwrap() };
        let gt = vec![to(synth_motion(7, 8, 4))];
        let pred = vec![to(synth_motion(8, 8, 4))];
        let w = LossWeights { rec: 1.0, kin: 0.0 };
        let t = total_loss(&pred, &gt, &m, &skel, &stats, w).unwrap();
        assert_eq!(t.total.to_bits(), rec_loss(&pred, &gt, &m, &stats).unwrap().to_bits());
        assert!(t.kin > 0.0);
    }
}

#[test]
fn weighted_sum_of_terms() {
    // two-joint chain, joint 1 predicted two units too far along its bone
    let skel = Skeleton::chain(&[[1.0, 0.0, 0.0]]);
    let gt = MotionSequence::new(
        vec![Pose { positions: vec![[0.0; 3], [1.0, 0.0, 0.0]], rotations: vec![Quat::IDENTITY; 2] }],
        30.0,
        Coord::Global,
    )
    .unwrap();
    let mut pred = gt.clone();
    pred.frames[0].positions[1] = [3.0, 0.0, 0.0];
    let stats = NormStats { joints: 2, mean: vec![[0.0; 3]; 2], std: vec![[1.0; 3], [2.0, 1.0, 1.0]] };
    let m = mask("K");
    // rec: |3 - 1| / 2 on one joint, averaged over two joints
    let rec = rec_oracle(&[pred.clone()], &[gt.clone()], &m, &stats);
    let ik = norm3([2.0, 0.0, 0.0]);
    assert_eq!((rec, ik), (0.5, 2.0));
    let t = total_loss(&[pred], &[gt], &m, &skel, &stats, LossWeights::default()).unwrap();
    assert!((t.total - 0.52).abs() < 1e-12);
    assert_eq!((t.rec, t.kin), (0.5, 2.0));
}

#[test]
fn ignored_frames_contribute_nothing() {
    let skel = synth_skeleton(4);
    let m = mask("KUUKIIII");
    let stats = NormStats::identity(4);
    let local = vec![synth_motion(9, 8, 4)];
    let pred = vec![synth_motion(10, 8, 4)];
    let mut noisy = local.clone();
    for f in &mut noisy[0].frames[4..] {
        f.positions[0] = [50.0, -20.0, 3.0];
        f.rotations[2] = Quat::from_axis_angle([1.0, 0.0, 0.0], 2.0);
    }
    let global: Vec<_> = local.iter().map(|s| s.to_global(&skel).unwrap()).collect();
    let noisy_global: Vec<_> = noisy.iter().map(|s| s.to_global(&skel).unwrap()).collect();
    let bits = |v: f64| v.to_bits();
    assert_eq!(bits(rec_loss(&pred, &local, &m, &stats).unwrap()), bits(rec_loss(&pred, &noisy, &m, &stats).unwrap()));
    assert_eq!(
        bits(fk_loss(&pred, &global, &m, &skel).unwrap()),
        bits(fk_loss(&pred, &noisy_global, &m, &skel).unwrap())
    );
    assert_eq!(bits(ik_loss(&global, &m, &skel).unwrap()), bits(ik_loss(&noisy_global, &m, &skel).unwrap()));
    let a = total_loss(&pred, &local, &m, &skel, &stats, LossWeights::default()).unwrap();
    let b = total_loss(&pred, &noisy, &m, &skel, &stats, LossWeights::default()).unwrap();
    assert_eq!(bits(a.total), bits(b.total));
}

#[test]
fn loss_gradients_match_finite_differences() {
    let skel = synth_skeleton(3);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let stats = random_stats(&mut rng, 3);
    let frames = active_frames(&mask("KUUKI"));
    for coord in [Coord::Local, Coord::Global] {
        let cfg = ModelConfig { joints: 3, t_max: 5, coord, ..Default::default() };
        let spec =
            LossSpec { cfg: &cfg, stats: &stats, skeleton: Some(&skel), weights: LossWeights { rec: 1.0, kin: 0.5 } };
        let y = Tensor::from_fn(&[2, 5, 21], |_| rng.random_range(-1.0..1.0));
        let target = Tensor::from_fn(&[2, 5, 21], |_| rng.random_range(-1.0..1.0));
        let g = Tensor::from_fn(&[2, 4, 3, 3], |_| rng.random_range(-1.0..1.0));
        let res = check(&[y], 1e-6, |tape, v| {
            let t = tape.constant(target.clone());
            let gg = tape.constant(g.clone());
            Ok(total_terms(tape, v[0], t, Some(gg), &frames, &spec)?.total)
        })
        .unwrap();
        assert!(res.max_rel_error() < 1e-3, "{coord:?}: {:?}", res.rel_errors);
    }
}
