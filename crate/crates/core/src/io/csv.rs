//! Positions-only motion as CSV: header `frame,j0x,j0y,j0z,j1x,...`, one row
//! per frame. Loaded sequences are global with identity rotations.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::kinematics::{Coord, MotionSequence, Pose, Quat};

pub const DEFAULT_FRAME_RATE: f64 = 30.0;

pub fn parse_positions_csv(text: &str) -> Result<MotionSequence> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or(Error::EmptyDataset)?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols.first() != Some(&"frame") || cols.len() < 4 || !(cols.len() - 1).is_multiple_of(3) {
        return Err(Error::Syntax { line: 1, message: "expected header `frame,j0x,j0y,j0z,...`".into() });
    }
    for (i, c) in cols[1..].iter().enumerate() {
        let want = format!("j{}{}", i / 3, ['x', 'y', 'z'][i % 3]);
        if *c != want {
            return Err(Error::Syntax { line: 1, message: format!("column {} is `{c}`, expected `{want}`", i + 1) });
        }
    }
    let joints = (cols.len() - 1) / 3;
    let mut frames = Vec::new();
    for (i, line) in lines {
        let vals = line
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Syntax { line: i + 1, message: e.to_string() })?;
        if vals.len() != cols.len() {
            return Err(Error::Syntax {
                line: i + 1,
                message: format!("{} values, expected {}", vals.len(), cols.len()),
            });
        }
        let positions = vals[1..].chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
        frames.push(Pose { positions, rotations: vec![Quat::IDENTITY; joints] });
    }
    MotionSequence::new(frames, DEFAULT_FRAME_RATE, Coord::Global)
}

pub fn positions_csv_string(seq: &MotionSequence) -> String {
    let joints = seq.num_joints();
    let mut out = String::from("frame");
    for j in 0..joints {
        let _ = write!(out, ",j{j}x,j{j}y,j{j}z");
    }
    out.push('\n');
    for (t, f) in seq.frames.iter().enumerate() {
        let _ = write!(out, "{t}");
        for p in &f.positions {
            let _ = write!(out, ",{:.6},{:.6},{:.6}", p[0], p[1], p[2]);
        }
        out.push('\n');
    }
    out
}
