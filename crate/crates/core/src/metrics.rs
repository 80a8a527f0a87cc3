//! Transition-quality metrics over global sequences.
//!
//! All three read the `Unknown` frames only. L2Q and L2P average a per-frame
//! L2 distance; NPSS compares normalized power spectra of every quaternion
//! channel with a 1-D earth mover's distance.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::NormStats;
use crate::kinematics::{Coord, MotionSequence};
use crate::mask::{CompletionMask, FrameLabel};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Metrics {
    pub l2q: f64,
    pub l2p: f64,
    pub npss: f64,
}

/// Which frames NPSS reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NpssSpan {
    /// The `Unknown` frames.
    #[default]
    Transition,
    /// Every frame that is not `Ignored`.
    Window,
}

impl NpssSpan {
    pub fn frames(self, mask: &CompletionMask) -> Vec<usize> {
        match self {
            NpssSpan::Transition => mask.frames_with(FrameLabel::Unknown).collect(),
            NpssSpan::Window => (0..mask.len()).filter(|&t| mask.get(t) != FrameLabel::Ignored).collect(),
        }
    }
}

fn check(pred: &MotionSequence, gt: &MotionSequence, mask: &CompletionMask) -> Result<Vec<usize>> {
    mask.check_len(gt.len())?;
    if pred.len() != gt.len() || pred.num_joints() != gt.num_joints() {
        return Err(Error::Shape(format!(
            "prediction {}x{} vs target {}x{}",
            pred.len(),
            pred.num_joints(),
            gt.len(),
            gt.num_joints()
        )));
    }
    if pred.coord != Coord::Global || gt.coord != Coord::Global {
        return Err(Error::Config("metrics are defined on global sequences".into()));
    }
    let frames: Vec<usize> = mask.frames_with(FrameLabel::Unknown).collect();
    if frames.is_empty() {
        return Err(Error::TooShort { need: 1, got: 0 });
    }
    Ok(frames)
}

/// Mean over unknown frames of the L2 norm of all hemisphere-aligned
/// quaternion differences of the frame.
pub fn l2q(pred: &MotionSequence, gt: &MotionSequence, mask: &CompletionMask) -> Result<f64> {
    let frames = check(pred, gt, mask)?;
    let total: f64 = frames
        .iter()
        .map(|&t| {
            let (p, g) = (&pred.frames[t], &gt.frames[t]);
            p.rotations
                .iter()
                .zip(&g.rotations)
                .map(|(q, r)| {
                    let q = q.align_to(*r).to_array();
                    let r = r.to_array();
                    (0..4).map(|k| (q[k] - r[k]).powi(2)).sum::<f64>()
                })
                .sum::<f64>()
                .sqrt()
        })
        .sum();
    Ok(total / frames.len() as f64)
}

/// Mean over unknown frames of the L2 norm of all z-scored position
/// differences of the frame.
pub fn l2p(
    pred: &MotionSequence,
    gt: &MotionSequence,
    mask: &CompletionMask,
    stats: Option<&NormStats>,
) -> Result<f64> {
    let stats = stats.ok_or(Error::MissingStats)?;
    let frames = check(pred, gt, mask)?;
    if stats.joints != gt.num_joints() {
        return Err(Error::DimensionMismatch(format!(
            "stats for {} joints, data has {}",
            stats.joints,
            gt.num_joints()
        )));
    }
    let total: f64 = frames
        .iter()
        .map(|&t| {
            let (p, g) = (&pred.frames[t], &gt.frames[t]);
            (0..gt.num_joints())
                .map(|j| {
                    let (a, b) = (stats.normalize(j, p.positions[j]), stats.normalize(j, g.positions[j]));
                    (0..3).map(|k| (a[k] - b[k]).powi(2)).sum::<f64>()
                })
                .sum::<f64>()
                .sqrt()
        })
        .sum();
    Ok(total / frames.len() as f64)
}

/// Power spectrum of a mean-subtracted signal.
fn power_spectrum(fft: &dyn rustfft::Fft<f64>, x: &[f64]) -> Vec<f64> {
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v - mean, 0.0)).collect();
    fft.process(&mut buf);
    buf.iter().map(Complex::norm_sqr).collect()
}

/// Earth mover's distance between two spectra, each normalized to unit mass.
/// A spectrum with no power counts as all mass in the zero-frequency bin,
/// which is where a constant signal keeps it.
pub fn spectrum_emd(a: &[f64], b: &[f64]) -> f64 {
    let cdf = |s: &[f64]| -> Vec<f64> {
        let total: f64 = s.iter().sum();
        let mut acc = 0.0;
        s.iter()
            .enumerate()
            .map(|(i, &v)| {
                acc += if total > 0.0 {
                    v / total
                } else if i == 0 {
                    1.0
                } else {
                    0.0
                };
                acc
            })
            .collect()
    };
    cdf(a).iter().zip(cdf(b)).map(|(x, y)| (x - y).abs()).sum()
}

/// Per-sequence channels (`J x 4` global quaternion components, aligned to
/// the target) over `frames`, as `(pred, gt)` signal pairs.
fn channels(pred: &MotionSequence, gt: &MotionSequence, frames: &[usize]) -> Vec<(Vec<f64>, Vec<f64>)> {
    let joints = gt.num_joints();
    let mut out = vec![(Vec::with_capacity(frames.len()), Vec::with_capacity(frames.len())); joints * 4];
    for &t in frames {
        for j in 0..joints {
            let r = gt.frames[t].rotations[j];
            let q = pred.frames[t].rotations[j].align_to(r).to_array();
            for (k, rv) in r.to_array().into_iter().enumerate() {
                out[j * 4 + k].0.push(q[k]);
                out[j * 4 + k].1.push(rv);
            }
        }
    }
    out
}

/// NPSS over a batch: the earth mover's distance of every channel of every
/// sequence, averaged with weights equal to the target channel's total power.
/// Channels whose target has no power are skipped; returns 0 when none has.
pub fn npss_batch(
    pred: &[MotionSequence],
    gt: &[MotionSequence],
    masks: &[CompletionMask],
    span: NpssSpan,
) -> Result<f64> {
    if pred.len() != gt.len() || gt.len() != masks.len() {
        return Err(Error::Shape(format!("{} predictions, {} targets, {} masks", pred.len(), gt.len(), masks.len())));
    }
    let mut planner = FftPlanner::new();
    let (mut num, mut den) = (0.0, 0.0);
    for ((p, g), m) in pred.iter().zip(gt).zip(masks) {
        check(p, g, m)?;
        let frames = span.frames(m);
        if frames.len() < 2 {
            return Err(Error::TooShort { need: 2, got: frames.len() });
        }
        let fft = planner.plan_fft_forward(frames.len());
        for (pc, gc) in channels(p, g, &frames) {
            let gs = power_spectrum(fft.as_ref(), &gc);
            let w: f64 = gs.iter().sum();
            if w <= 0.0 {
                continue;
            }
            num += w * spectrum_emd(&power_spectrum(fft.as_ref(), &pc), &gs);
            den += w;
        }
    }
    Ok(if den > 0.0 { num / den } else { 0.0 })
}

/// NPSS of a single sequence over its transition.
pub fn npss(pred: &MotionSequence, gt: &MotionSequence, mask: &CompletionMask) -> Result<f64> {
    npss_batch(std::slice::from_ref(pred), std::slice::from_ref(gt), std::slice::from_ref(mask), NpssSpan::Transition)
}
