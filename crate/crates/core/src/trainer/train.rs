use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::eval::{evaluate, EvalOptions};
use super::optim::{adam_step, clip_grad_norm, lr_schedule, AdamConfig, AdamState, DecayMode};
use super::scenario::{Scenario, ScenarioSpec};
use crate::error::{Error, Result};
use crate::interp::fill_unknown;
use crate::io::compute_norm_stats;
use crate::kinematics::{Coord, MotionSequence, Skeleton};
use crate::losses::{active_frames, global_positions, total_terms, LossSpec, LossWeights};
use crate::metrics::Metrics;
use crate::model::network::{network, Weights};
use crate::model::{encode, Checkpoint, ModelConfig, ParamStore};
use crate::tensor::{Tape, Tensor};

/// Lower bound on feature standard deviations. Local bone offsets are
/// constant, so their raw deviation is zero up to rounding.
pub const FEATURE_STD_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub max_lr: f64,
    pub warmup_epochs: usize,
    pub decay_factor: f64,
    pub decay_every: usize,
    pub decay_mode: DecayMode,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub loss: LossWeights,
    /// Global gradient norm cap; 0 disables clipping.
    pub clip_norm: f64,
    pub adam: AdamConfig,
    /// Evaluate on the validation set every this many epochs; 0 never.
    pub eval_every: usize,
    pub eval_scenarios: Vec<Scenario>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_lr: 1e-3,
            warmup_epochs: 50,
            decay_factor: 0.75,
            decay_every: 200,
            decay_mode: DecayMode::LearningRate,
            epochs: 1000,
            batch_size: 32,
            seed: 0,
            loss: LossWeights::default(),
            clip_norm: 1.0,
            adam: AdamConfig::default(),
            eval_every: 0,
            eval_scenarios: vec![Scenario::InBetweening { length: 30 }],
        }
    }
}

impl TrainConfig {
    pub fn lr(&self, epoch: usize) -> f64 {
        lr_schedule(epoch, self.max_lr, self.warmup_epochs, self.decay_factor, self.decay_every, self.decay_mode)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.epochs == 0 || self.batch_size == 0 {
            return bad(format!("epochs {} and batch size {} must be positive", self.epochs, self.batch_size));
        }
        if self.warmup_epochs >= self.epochs {
            return bad(format!("warm-up of {} epochs is not shorter than {} epochs", self.warmup_epochs, self.epochs));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return bad(format!("decay factor {} outside (0, 1]", self.decay_factor));
        }
        if !(self.max_lr.is_finite() && self.max_lr > 0.0) || self.decay_every == 0 {
            return bad(format!("max_lr {} / decay_every {}", self.max_lr, self.decay_every));
        }
        if !(self.clip_norm >= 0.0) || !self.loss.rec.is_finite() || !self.loss.kin.is_finite() {
            return bad("clip norm and loss coefficients must be finite".into());
        }
        Ok(())
    }
}

/// The JSON config file: model, training and scenario sections.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub scenarios: ScenarioSpec,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self, window: usize) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.scenarios.validate(window)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub scenario: Scenario,
    pub metrics: Metrics,
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    /// Batch means of the weighted total and of each term.
    pub loss: f64,
    pub rec: f64,
    pub kin: f64,
    /// Mean gradient norm before clipping.
    pub grad_norm: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub eval: Option<Vec<EvalSummary>>,
}

impl EpochLog {
    pub fn to_json_line(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<EpochLog>,
}

fn in_coord(seq: &MotionSequence, coord: Coord, skel: &Skeleton) -> Result<MotionSequence> {
    match coord {
        Coord::Local => seq.to_local(skel),
        Coord::Global => seq.to_global(skel),
    }
}

/// Trains a fresh model on equal-length windows. `on_epoch` sees every log
/// line as it is produced; validation runs every `eval_every` epochs and
/// after the last one when `val` is given.
pub fn train(
    data: &[MotionSequence],
    skel: &Skeleton,
    cfg: &RunConfig,
    val: Option<&[MotionSequence]>,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    let window = data.first().ok_or(Error::EmptyDataset)?.len();
    cfg.validate(window)?;
    let (mcfg, tcfg) = (&cfg.model, &cfg.train);
    if skel.num_joints() != mcfg.joints {
        return Err(Error::DimensionMismatch(format!(
            "skeleton has {} joints, model {}",
            skel.num_joints(),
            mcfg.joints
        )));
    }
    for s in data {
        if s.len() != window {
            return Err(Error::DimensionMismatch(format!("windows of {} and {window} frames", s.len())));
        }
        if s.num_joints() != mcfg.joints {
            return Err(Error::DimensionMismatch(format!("data has {} joints, model {}", s.num_joints(), mcfg.joints)));
        }
    }
    if window > mcfg.t_max {
        return Err(Error::DimensionMismatch(format!("{window}-frame windows exceed t_max {}", mcfg.t_max)));
    }

    let seqs: Vec<MotionSequence> =
        data.iter().map(|s| Ok(in_coord(s, mcfg.coord, skel)?.with_continuous_rotations())).collect::<Result<_>>()?;
    let globals: Vec<MotionSequence> = data.iter().map(|s| s.to_global(skel)).collect::<Result<_>>()?;
    let mut stats = compute_norm_stats(&seqs)?;
    stats.std.iter_mut().flatten().for_each(|s| *s = s.max(FEATURE_STD_FLOOR));
    let eval_stats = compute_norm_stats(&globals)?;

    let mut params = ParamStore::<f32>::init(mcfg, tcfg.seed)?;
    let mut adam = AdamState::new(params.tensors());
    let mut rng = ChaCha8Rng::seed_from_u64(tcfg.seed);
    let spec = LossSpec { cfg: mcfg, stats: &stats, skeleton: Some(skel), weights: tcfg.loss };
    let needs_fk = mcfg.coord == Coord::Local && !mcfg.positions_only;
    let d = mcfg.input_dim();
    let mut order: Vec<usize> = (0..seqs.len()).collect();
    let mut log = Vec::with_capacity(tcfg.epochs);

    for epoch in 0..tcfg.epochs {
        let lr = tcfg.lr(epoch);
        order.shuffle(&mut rng);
        let (mut sums, mut batches) = ([0.0f64; 4], 0usize);
        for chunk in order.chunks(tcfg.batch_size) {
            let mask = cfg.scenarios.sample(&mut rng, window)?.mask(window)?;
            let frames = active_frames(&mask);
            let b = chunk.len();
            let (mut x, mut target) = (Vec::with_capacity(b * window * d), Vec::with_capacity(b * window * d));
            for &i in chunk {
                x.extend(encode::<f32>(&fill_unknown(&seqs[i], &mask)?, Some(&mask), mcfg, &stats)?);
                target.extend(encode::<f32>(&seqs[i], Some(&mask), mcfg, &stats)?);
            }
            let tape = Tape::new();
            let vars = params.bind(&tape, true);
            let w = Weights::from_vars(&vars, mcfg.layers)?;
            let xv = tape.constant(Tensor::new(vec![b, window, d], x)?);
            let tv = tape.constant(Tensor::new(vec![b, window, d], target)?);
            let gt = if needs_fk {
                let batch: Vec<MotionSequence> = chunk.iter().map(|&i| globals[i].clone()).collect();
                let g = global_positions::<f32>(&batch, &frames, skel)?;
                Some(tape.constant(Tensor::new(vec![b, frames.len(), mcfg.joints, 3], g)?))
            } else {
                None
            };
            let masks = vec![&mask; b];
            let y = network(xv, &masks, &w, mcfg, None)?;
            let terms = total_terms(&tape, y, tv, gt, &frames, &spec)?;
            let loss = terms.total.item() as f64;
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch });
            }
            let mut g = tape.backward(terms.total)?;
            let mut grads: Vec<Tensor<f32>> = vars
                .iter()
                .zip(params.tensors())
                .map(|(v, p)| g.take(*v).unwrap_or_else(|| Tensor::zeros(p.shape())))
                .collect();
            if tcfg.decay_mode == DecayMode::L2 {
                let c = tcfg.decay_factor as f32;
                for (gr, p) in grads.iter_mut().zip(params.tensors()) {
                    gr.data_mut().iter_mut().zip(p.data()).for_each(|(a, &v)| *a += c * v);
                }
            }
            let norm = if tcfg.clip_norm > 0.0 {
                clip_grad_norm(&mut grads, tcfg.clip_norm)
            } else {
                grads.iter().map(|t| t.sum_sq() as f64).sum::<f64>().sqrt()
            };
            if !norm.is_finite() {
                return Err(Error::Diverged { epoch });
            }
            adam_step(params.tensors_mut(), &grads, &mut adam, lr, &tcfg.adam)?;
            if params.tensors().iter().any(|t| t.data().iter().any(|v| !v.is_finite())) {
                return Err(Error::Diverged { epoch });
            }
            let terms = [loss, terms.rec.item() as f64, terms.kin.item() as f64, norm];
            sums.iter_mut().zip(terms).for_each(|(s, v)| *s += v);
            batches += 1;
        }
        let n = batches as f64;
        let mut entry = EpochLog {
            epoch,
            lr,
            loss: sums[0] / n,
            rec: sums[1] / n,
            kin: sums[2] / n,
            grad_norm: sums[3] / n,
            eval: None,
        };
        let due = tcfg.eval_every > 0 && ((epoch + 1) % tcfg.eval_every == 0 || epoch + 1 == tcfg.epochs);
        if let (true, Some(val)) = (due, val) {
            let ck = Checkpoint::from_parts(
                mcfg.clone(),
                params.clone(),
                Some(stats.clone()),
                Some(eval_stats.clone()),
                Some(skel.clone()),
            );
            let opts = EvalOptions { stats: Some(eval_stats.clone()), ..Default::default() };
            let report = evaluate(&ck, val, skel, &tcfg.eval_scenarios, &opts)?;
            entry.eval = Some(
                report.rows.into_iter().map(|r| EvalSummary { scenario: r.scenario, metrics: r.metrics }).collect(),
            );
        }
        on_epoch(&entry);
        log.push(entry);
    }
    let checkpoint = Checkpoint::from_parts(mcfg.clone(), params, Some(stats), Some(eval_stats), Some(skel.clone()));
    Ok(TrainOutcome { checkpoint, log })
}
