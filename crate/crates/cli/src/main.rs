mod data;

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use motion_complete::interp::fill_unknown;
use motion_complete::io::{synth_motion, synth_skeleton, BvhDocument, NormStats, WindowSpec};
use motion_complete::kinematics::standardize_tpose;
use motion_complete::metrics::NpssSpan;
use motion_complete::model::Checkpoint;
use motion_complete::trainer::{
    evaluate_all, train, EvalOptions, Interpolation, Predictor, RunConfig, Scenario, ScenarioKind, ZeroVelocity,
};
use motion_complete::{Coord, Error, FrameLabel, MotionSequence, Result};

use data::{load_dir, load_file, render, windows, Format};

#[derive(Parser)]
#[command(name = "motion-complete", version, about = "Single-shot transformer motion completion")]
struct Cli {
    /// Worker threads for per-sequence work.
    #[arg(long, global = true, env = "MOTION_COMPLETE_THREADS", default_value_t = 1)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model on a directory of motion files.
    Train(TrainArgs),
    /// Complete the missing frames of one motion file.
    Complete(CompleteArgs),
    /// Score a checkpoint and the baselines on a directory of motion files.
    Eval(EvalArgs),
    /// Write a deterministic synthetic corpus.
    Synth(SynthArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum CoordArg {
    Local,
    Global,
}

impl From<CoordArg> for Coord {
    fn from(c: CoordArg) -> Self {
        match c {
            CoordArg::Local => Coord::Local,
            CoordArg::Global => Coord::Global,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Inbetween,
    Infill,
    Blend,
}

impl From<KindArg> for ScenarioKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Inbetween => ScenarioKind::InBetweening,
            KindArg::Infill => ScenarioKind::InFilling,
            KindArg::Blend => ScenarioKind::Blending,
        }
    }
}

#[derive(Args)]
struct ScenarioArgs {
    #[arg(long, value_enum, default_value = "inbetween")]
    scenario: KindArg,
    /// Transition length(s) for in-betweening.
    #[arg(long, value_delimiter = ',')]
    length: Vec<usize>,
    /// Keyframe interval(s) for in-filling.
    #[arg(long, value_delimiter = ',')]
    interval: Vec<usize>,
    /// Blend window(s).
    #[arg(long, value_delimiter = ',')]
    window: Vec<usize>,
}

impl ScenarioArgs {
    fn scenarios(&self, default: &[usize]) -> Result<Vec<Scenario>> {
        let (given, flag) = match self.scenario {
            KindArg::Inbetween => (&self.length, "--length"),
            KindArg::Infill => (&self.interval, "--interval"),
            KindArg::Blend => (&self.window, "--window"),
        };
        let params = if given.is_empty() { default } else { given.as_slice() };
        if params.is_empty() {
            return Err(Error::Config(format!("{flag} is required")));
        }
        Ok(params.iter().map(|&p| Scenario::new(self.scenario.into(), p)).collect())
    }
}

#[derive(Args)]
struct WindowArgs {
    /// Window width for slicing sequences; defaults to the model's maximum length.
    #[arg(long)]
    window_width: Option<usize>,
    /// Window stride; defaults to the width.
    #[arg(long)]
    window_offset: Option<usize>,
}

impl WindowArgs {
    fn spec(&self, t_max: usize) -> Result<WindowSpec> {
        let width = self.window_width.unwrap_or(t_max);
        WindowSpec::new(width, self.window_offset.unwrap_or(width))
    }
}

#[derive(Args)]
struct TrainArgs {
    /// JSON file with `model`, `train` and `scenarios` sections.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: PathBuf,
    /// Held-out data for periodic evaluation.
    #[arg(long)]
    val: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// JSON-lines training log; defaults to `<out>.log.jsonl`.
    #[arg(long)]
    log: Option<PathBuf>,
    #[command(flatten)]
    windows: WindowArgs,
    #[arg(long, value_enum)]
    coord: Option<CoordArg>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
}

#[derive(Args)]
struct CompleteArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    input: PathBuf,
    /// Written in the input's format.
    #[arg(long)]
    output: PathBuf,
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[arg(long)]
    standardize_tpose: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[command(flatten)]
    windows: WindowArgs,
    /// Coordinates the baselines interpolate in; defaults to the model's.
    #[arg(long, value_enum)]
    coord: Option<CoordArg>,
    #[arg(long)]
    standardize_tpose: bool,
    /// Position statistics for L2P; defaults to the checkpoint's.
    #[arg(long)]
    stats: Option<PathBuf>,
    /// Frames NPSS reads.
    #[arg(long, default_value = "transition")]
    npss_span: String,
    /// JSON report path; printed to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 10)]
    count: usize,
    #[arg(long, default_value_t = 65)]
    frames: usize,
    #[arg(long, default_value_t = 22)]
    joints: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "bvh")]
    format: FormatArg,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Bvh,
    Csv,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::InvalidWindow { .. } => 2,
        Error::Diverged { .. } => 4,
        Error::DimensionMismatch(_) | Error::DoesNotFit(_) | Error::MaskLengthMismatch { .. } => 5,
        Error::Io(_)
        | Error::Json(_)
        | Error::Syntax { .. }
        | Error::UnsupportedChannel(_)
        | Error::SequenceTooShort { .. }
        | Error::EmptyDataset
        | Error::Checkpoint(_)
        | Error::MissingStats
        | Error::TooShort { .. } => 3,
        _ => 1,
    }
}

fn context(path: &Path, e: Error) -> Error {
    match e {
        Error::Io(io) => Error::Io(std::io::Error::new(io.kind(), format!("{}: {io}", path.display()))),
        e => e,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let jobs = cli.jobs.max(1);
    let result = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Complete(a) => cmd_complete(a),
        Command::Eval(a) => cmd_eval(a, jobs),
        Command::Synth(a) => cmd_synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
            RunConfig::from_json(&text)?
        }
        None => RunConfig::default(),
    };
    if let Some(c) = a.coord {
        cfg.model.coord = c.into();
    }
    if let Some(s) = a.seed {
        cfg.train.seed = s;
    }
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    if let Some(lr) = a.lr {
        cfg.train.max_lr = lr;
    }
    if let Some(b) = a.batch_size {
        cfg.train.batch_size = b;
    }
    let spec = a.windows.spec(cfg.model.t_max)?;
    let (skel, seqs) = load_dir(&a.data).map_err(|e| context(&a.data, e))?;
    let data = windows(&seqs, spec)?;
    let val = match &a.val {
        Some(dir) => {
            let (vskel, vseqs) = load_dir(dir).map_err(|e| context(dir, e))?;
            if vskel != skel {
                return Err(Error::DimensionMismatch("validation skeleton differs from training".into()));
            }
            Some(windows(&vseqs, spec)?)
        }
        None => None,
    };
    let log_path = a.log.clone().unwrap_or_else(|| {
        let mut p = a.out.clone().into_os_string();
        p.push(".log.jsonl");
        p.into()
    });
    let mut log = fs::File::create(&log_path)?;
    let mut write_err = None;
    let t0 = Instant::now();
    let outcome = train(&data, &skel, &cfg, val.as_deref(), |e| {
        let line = e.to_json_line().expect("log lines serialize");
        if let Err(err) = writeln!(log, "{line}") {
            write_err.get_or_insert(err);
        }
    })?;
    if let Some(err) = write_err {
        return Err(err.into());
    }
    outcome.checkpoint.save(&a.out)?;
    let last = outcome.log.last().expect("at least one epoch");
    eprintln!(
        "trained {} windows for {} epochs in {:.1?}: loss {:.5}, rec {:.5}; wrote {}",
        data.len(),
        outcome.log.len(),
        t0.elapsed(),
        last.loss,
        last.rec,
        a.out.display()
    );
    Ok(())
}

fn to_coord(seq: &MotionSequence, coord: Coord, skel: &motion_complete::Skeleton) -> Result<MotionSequence> {
    match coord {
        Coord::Local => seq.to_local(skel),
        Coord::Global => seq.to_global(skel),
    }
}

fn cmd_complete(a: CompleteArgs) -> Result<()> {
    let ck = Checkpoint::load(&a.checkpoint).map_err(|e| context(&a.checkpoint, e))?;
    let motion = load_file(&a.input).map_err(|e| context(&a.input, e))?;
    let skel = &motion.skeleton;
    let scenarios = a.scenario.scenarios(&[])?;
    let [scenario] = scenarios[..] else {
        return Err(Error::Config("complete takes a single scenario parameter".into()));
    };
    if let Some(s) = &ck.skeleton {
        if s.num_joints() != skel.num_joints() {
            return Err(Error::DimensionMismatch(format!(
                "model has {} joints, input {}",
                s.num_joints(),
                skel.num_joints()
            )));
        }
    }
    let seq = &motion.sequence;
    let mask = scenario.mask(seq.len())?;
    let input = to_coord(seq, ck.config.coord, skel)?.with_continuous_rotations();
    let prefilled = fill_unknown(&input, &mask)?;
    let t0 = Instant::now();
    let pred = ck.forward(&prefilled, &mask)?;
    let elapsed = t0.elapsed();
    let mut out = if a.standardize_tpose { standardize_tpose(&pred.to_global(skel)?, skel)? } else { pred };
    out = to_coord(&out, seq.coord, skel)?;
    for t in mask.frames_with(FrameLabel::Keyframe) {
        out.frames[t] = seq.frames[t].clone();
    }
    fs::write(&a.output, render(motion.format, skel, &out, motion.bvh.as_ref())?)?;
    eprintln!(
        "{scenario}: {} frames, {} unknown, forward pass {:.3} ms",
        seq.len(),
        mask.count(FrameLabel::Unknown),
        elapsed.as_secs_f64() * 1e3
    );
    Ok(())
}

fn cmd_eval(a: EvalArgs, jobs: usize) -> Result<()> {
    let ck = Checkpoint::load(&a.checkpoint).map_err(|e| context(&a.checkpoint, e))?;
    let (skel, seqs) = load_dir(&a.data).map_err(|e| context(&a.data, e))?;
    let data = windows(&seqs, a.windows.spec(ck.config.t_max)?)?;
    let scenarios = a.scenario.scenarios(match a.scenario.scenario {
        KindArg::Inbetween => &[5, 15, 30],
        KindArg::Infill => &[5, 15, 30],
        KindArg::Blend => &[8, 16, 32],
    })?;
    let stats = match &a.stats {
        Some(p) => Some(NormStats::from_json(&fs::read_to_string(p).map_err(|e| context(p, e.into()))?)?),
        None => ck.eval_stats.clone(),
    };
    let npss_span = match a.npss_span.as_str() {
        "transition" => NpssSpan::Transition,
        "window" => NpssSpan::Window,
        other => return Err(Error::Config(format!("unknown NPSS span `{other}`"))),
    };
    let coord = a.coord.map_or(ck.config.coord, Coord::from);
    let opts = EvalOptions { stats, standardize_tpose: a.standardize_tpose, npss_span, jobs };
    let (zv, ip) = (ZeroVelocity(coord), Interpolation(coord));
    let predictors: [&dyn Predictor; 3] = [&zv, &ip, &ck];
    let report = evaluate_all(&predictors, &data, &skel, &scenarios, &opts)?;
    let json = report.to_json()?;
    match &a.out {
        Some(p) => fs::write(p, json)?,
        None => println!("{json}"),
    }
    eprint!("{}", report.table());
    Ok(())
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    if a.frames < 2 || a.joints < 2 {
        return Err(Error::Config("synthetic motion needs at least 2 frames and 2 joints".into()));
    }
    fs::create_dir_all(&a.out)?;
    let skel = synth_skeleton(a.joints);
    let channels = BvhDocument::default_channels(a.joints);
    for i in 0..a.count {
        let seq = synth_motion(a.seed.wrapping_add(i as u64), a.frames, a.joints);
        let (name, text) = match a.format {
            FormatArg::Bvh => (
                format!("synth_{i:04}.bvh"),
                BvhDocument::from_sequence(&skel, &seq, channels.clone())?.to_bvh_string(),
            ),
            FormatArg::Csv => (format!("synth_{i:04}.csv"), render(Format::Csv, &skel, &seq, None)?),
        };
        fs::write(a.out.join(name), text)?;
    }
    eprintln!("wrote {} sequences to {}", a.count, a.out.display());
    Ok(())
}
