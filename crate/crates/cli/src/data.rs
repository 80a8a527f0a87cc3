use std::fs;
use std::path::{Path, PathBuf};

use motion_complete::io::{
    parse_bvh, parse_positions_csv, positions_csv_string, slice_windows, BvhDocument, WindowSpec,
};
use motion_complete::{Error, MotionSequence, Result, Skeleton};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Bvh,
    Csv,
}

impl Format {
    pub fn of(path: &Path) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
            Some("bvh") => Ok(Format::Bvh),
            Some("csv") => Ok(Format::Csv),
            _ => Err(Error::Config(format!("{}: expected a .bvh or .csv file", path.display()))),
        }
    }
}

/// One loaded motion file. CSV files carry positions only and get a flat
/// placeholder skeleton.
pub struct Motion {
    pub format: Format,
    pub skeleton: Skeleton,
    pub sequence: MotionSequence,
    pub bvh: Option<BvhDocument>,
}

/// All joints hang off the root with zero offsets.
pub fn flat_skeleton(joints: usize) -> Result<Skeleton> {
    let parents = (0..joints).map(|j| if j == 0 { None } else { Some(0) }).collect();
    Skeleton::new(parents, vec![[0.0; 3]; joints], (0..joints).map(|j| format!("j{j}")).collect())
}

pub fn load_file(path: &Path) -> Result<Motion> {
    let format = Format::of(path)?;
    let text = fs::read_to_string(path)?;
    match format {
        Format::Bvh => {
            let doc = parse_bvh(&text)?;
            Ok(Motion { format, skeleton: doc.skeleton.clone(), sequence: doc.to_sequence()?, bvh: Some(doc) })
        }
        Format::Csv => {
            let sequence = parse_positions_csv(&text)?;
            Ok(Motion { format, skeleton: flat_skeleton(sequence.num_joints())?, sequence, bvh: None })
        }
    }
}

fn motion_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<Vec<_>>>()?
        .into_iter()
        .filter(|p| Format::of(p).is_ok())
        .collect();
    files.sort();
    Ok(files)
}

/// Every `.bvh` / `.csv` file of `dir` in name order. Files must agree on
/// format and skeleton.
pub fn load_dir(dir: &Path) -> Result<(Skeleton, Vec<MotionSequence>)> {
    let files = motion_files(dir)?;
    let mut out: Option<(Format, Skeleton)> = None;
    let mut seqs = Vec::with_capacity(files.len());
    for f in &files {
        let m = load_file(f)?;
        match &out {
            None => out = Some((m.format, m.skeleton)),
            Some((format, skel)) => {
                if *format != m.format || *skel != m.skeleton {
                    return Err(Error::DimensionMismatch(format!("{} differs in format or skeleton", f.display())));
                }
            }
        }
        seqs.push(m.sequence);
    }
    let (_, skel) = out.ok_or(Error::EmptyDataset)?;
    Ok((skel, seqs))
}

/// Cuts every sequence into windows; sequences shorter than one window are
/// skipped.
pub fn windows(seqs: &[MotionSequence], spec: WindowSpec) -> Result<Vec<MotionSequence>> {
    let mut out = Vec::new();
    for s in seqs {
        match slice_windows(s, spec) {
            Ok(w) => out.extend(w),
            Err(Error::SequenceTooShort { .. }) => {}
            Err(e) => return Err(e),
        }
    }
    if out.is_empty() {
        return Err(Error::SequenceTooShort {
            len: seqs.iter().map(MotionSequence::len).max().unwrap_or(0),
            width: spec.width,
        });
    }
    Ok(out)
}

/// Serializes `seq` (local coordinates for BVH, global for CSV).
pub fn render(format: Format, skel: &Skeleton, seq: &MotionSequence, template: Option<&BvhDocument>) -> Result<String> {
    match format {
        Format::Csv => Ok(positions_csv_string(&seq.to_global(skel)?)),
        Format::Bvh => {
            let local = seq.to_local(skel)?;
            let channels =
                template.map_or_else(|| BvhDocument::default_channels(skel.num_joints()), |d| d.channels.clone());
            let mut doc = BvhDocument::from_sequence(skel, &local, channels)?;
            if let Some(t) = template {
                doc.end_sites = t.end_sites.clone();
                doc.root_offset = t.root_offset;
            }
            Ok(doc.to_bvh_string())
        }
    }
}
