use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::Scenario;
use crate::error::{Error, Result};
use crate::interp::{fill_unknown, zero_velocity_baseline};
use crate::io::NormStats;
use crate::kinematics::{standardize_tpose, Coord, MotionSequence, Skeleton};
use crate::mask::{CompletionMask, FrameLabel};
use crate::metrics::{l2p, l2q, npss_batch, Metrics, NpssSpan};
use crate::model::Checkpoint;

/// Anything that completes a prefilled sequence.
pub trait Predictor: Sync {
    fn name(&self) -> &str;

    /// Coordinate system the predictor reads and writes.
    fn coord(&self) -> Coord;

    /// `prefilled` is in [`coord`](Self::coord), with unknown frames already
    /// interpolated from the keyframes.
    fn predict(&self, prefilled: &MotionSequence, mask: &CompletionMask) -> Result<MotionSequence>;
}

/// Repeats the last keyframe.
#[derive(Debug, Clone, Copy)]
pub struct ZeroVelocity(pub Coord);

impl Predictor for ZeroVelocity {
    fn name(&self) -> &str {
        "Zero-Vel"
    }

    fn coord(&self) -> Coord {
        self.0
    }

    fn predict(&self, prefilled: &MotionSequence, mask: &CompletionMask) -> Result<MotionSequence> {
        zero_velocity_baseline(prefilled, mask)
    }
}

/// Linear positions, spherical rotations between keyframes.
#[derive(Debug, Clone, Copy)]
pub struct Interpolation(pub Coord);

impl Predictor for Interpolation {
    fn name(&self) -> &str {
        "Interp"
    }

    fn coord(&self) -> Coord {
        self.0
    }

    fn predict(&self, prefilled: &MotionSequence, mask: &CompletionMask) -> Result<MotionSequence> {
        fill_unknown(prefilled, mask)
    }
}

impl Predictor for Checkpoint {
    fn name(&self) -> &str {
        "Model"
    }

    fn coord(&self) -> Coord {
        self.config.coord
    }

    fn predict(&self, prefilled: &MotionSequence, mask: &CompletionMask) -> Result<MotionSequence> {
        self.forward(prefilled, mask)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalOptions {
    /// Training-set global position statistics for L2P.
    pub stats: Option<NormStats>,
    pub standardize_tpose: bool,
    pub npss_span: NpssSpan,
    /// Worker threads; 1 runs inline.
    pub jobs: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self { stats: None, standardize_tpose: false, npss_span: NpssSpan::Transition, jobs: 1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SequenceMetrics {
    pub index: usize,
    pub l2q: f64,
    pub l2p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub method: String,
    pub scenario: Scenario,
    #[serde(flatten)]
    pub metrics: Metrics,
    pub per_sequence: Vec<SequenceMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub scenarios: Vec<Scenario>,
    pub rows: Vec<EvalRow>,
}

impl EvalReport {
    pub fn row(&self, method: &str, scenario: Scenario) -> Option<&EvalRow> {
        self.rows.iter().find(|r| r.method == method && r.scenario == scenario)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Plain-text table, one line per method and scenario.
    pub fn table(&self) -> String {
        let mut out = format!("{:<10} {:<14} {:>8} {:>8} {:>8}\n", "method", "scenario", "L2Q", "L2P", "NPSS");
        for r in &self.rows {
            out += &format!(
                "{:<10} {:<14} {:>8.4} {:>8.4} {:>8.4}\n",
                r.method,
                r.scenario.to_string(),
                r.metrics.l2q,
                r.metrics.l2p,
                r.metrics.npss
            );
        }
        out
    }
}

/// Scores global predictions against global targets, each with its own mask.
pub fn score(
    pred: &[MotionSequence],
    gt: &[MotionSequence],
    masks: &[CompletionMask],
    stats: Option<&NormStats>,
    span: NpssSpan,
) -> Result<(Metrics, Vec<SequenceMetrics>)> {
    if pred.is_empty() || pred.len() != gt.len() || gt.len() != masks.len() {
        return Err(Error::Shape(format!("{} predictions, {} targets, {} masks", pred.len(), gt.len(), masks.len())));
    }
    let per: Vec<SequenceMetrics> = pred
        .iter()
        .zip(gt)
        .zip(masks)
        .enumerate()
        .map(|(index, ((p, g), m))| Ok(SequenceMetrics { index, l2q: l2q(p, g, m)?, l2p: l2p(p, g, m, stats)? }))
        .collect::<Result<_>>()?;
    let n = per.len() as f64;
    let metrics = Metrics {
        l2q: per.iter().map(|s| s.l2q).sum::<f64>() / n,
        l2p: per.iter().map(|s| s.l2p).sum::<f64>() / n,
        npss: npss_batch(pred, gt, masks, span)?,
    };
    Ok((metrics, per))
}

/// Prefills, predicts, restores keyframes and returns the global result.
pub fn complete_one(
    predictor: &dyn Predictor,
    seq: &MotionSequence,
    mask: &CompletionMask,
    skel: &Skeleton,
    standardize: bool,
) -> Result<MotionSequence> {
    let input = in_coord(seq, predictor.coord(), skel)?.with_continuous_rotations();
    let prefilled = fill_unknown(&input, mask)?;
    let mut pred = predictor.predict(&prefilled, mask)?;
    if pred.len() != input.len() || pred.num_joints() != input.num_joints() {
        return Err(Error::DimensionMismatch(format!("{} returned the wrong shape", predictor.name())));
    }
    for t in mask.frames_with(FrameLabel::Keyframe) {
        pred.frames[t] = input.frames[t].clone();
    }
    let global = pred.to_global(skel)?;
    if standardize {
        standardize_tpose(&global, skel)
    } else {
        Ok(global)
    }
}

fn in_coord(seq: &MotionSequence, coord: Coord, skel: &Skeleton) -> Result<MotionSequence> {
    match coord {
        Coord::Local => seq.to_local(skel),
        Coord::Global => seq.to_global(skel),
    }
}

/// Maps `f` over `items`, on a `jobs`-thread pool when `jobs > 1`. Output
/// order follows input order either way.
pub fn map_jobs<I: Sync, R: Send>(
    jobs: usize,
    items: &[I],
    f: impl Fn(&I) -> Result<R> + Sync + Send,
) -> Result<Vec<R>> {
    if jobs <= 1 {
        return items.iter().map(f).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| items.par_iter().map(f).collect())
}

/// Runs `predictor` on every window under every scenario. Windows may be in
/// either coordinate system; metrics are taken on the global result.
pub fn evaluate(
    predictor: &dyn Predictor,
    data: &[MotionSequence],
    skel: &Skeleton,
    scenarios: &[Scenario],
    opts: &EvalOptions,
) -> Result<EvalReport> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    for s in data {
        if s.num_joints() != skel.num_joints() {
            return Err(Error::DimensionMismatch(format!(
                "data has {} joints, skeleton {}",
                s.num_joints(),
                skel.num_joints()
            )));
        }
    }
    let gt: Vec<MotionSequence> = data.iter().map(|s| s.to_global(skel)).collect::<Result<_>>()?;
    let mut rows = Vec::with_capacity(scenarios.len());
    for &scenario in scenarios {
        let masks: Vec<CompletionMask> = data.iter().map(|s| scenario.mask(s.len())).collect::<Result<_>>()?;
        let pairs: Vec<(&MotionSequence, &CompletionMask)> = data.iter().zip(&masks).collect();
        let preds = map_jobs(opts.jobs, &pairs, |(s, m)| complete_one(predictor, s, m, skel, opts.standardize_tpose))?;
        let (metrics, per_sequence) = score(&preds, &gt, &masks, opts.stats.as_ref(), opts.npss_span)?;
        rows.push(EvalRow { method: predictor.name().to_string(), scenario, metrics, per_sequence });
    }
    Ok(EvalReport { scenarios: scenarios.to_vec(), rows })
}

/// [`evaluate`] for several predictors, rows concatenated in order.
pub fn evaluate_all(
    predictors: &[&dyn Predictor],
    data: &[MotionSequence],
    skel: &Skeleton,
    scenarios: &[Scenario],
    opts: &EvalOptions,
) -> Result<EvalReport> {
    let mut rows = Vec::new();
    for p in predictors {
        rows.extend(evaluate(*p, data, skel, scenarios, opts)?.rows);
    }
    Ok(EvalReport { scenarios: scenarios.to_vec(), rows })
}
