//! BVH motion-capture files.
//!
//! Euler channels are composed in the order they are declared, so
//! `Zrotation Xrotation Yrotation` means `Rz * Rx * Ry`. Angles are degrees
//! on disk and radians everywhere else. A joint's position channels, when
//! present, replace its `OFFSET` for that frame; the root `OFFSET` is kept
//! on the document and the skeleton's root row stays zero.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::kinematics::{Axis, Coord, EulerOrder, MotionSequence, Pose, Quat, Skeleton, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Channel {
    Position(Axis),
    Rotation(Axis),
}

impl Channel {
    fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "Xposition" => Channel::Position(Axis::X),
            "Yposition" => Channel::Position(Axis::Y),
            "Zposition" => Channel::Position(Axis::Z),
            "Xrotation" => Channel::Rotation(Axis::X),
            "Yrotation" => Channel::Rotation(Axis::Y),
            "Zrotation" => Channel::Rotation(Axis::Z),
            other => return Err(Error::UnsupportedChannel(other.to_string())),
        })
    }

    fn name(self) -> &'static str {
        match self {
            Channel::Position(Axis::X) => "Xposition",
            Channel::Position(Axis::Y) => "Yposition",
            Channel::Position(Axis::Z) => "Zposition",
            Channel::Rotation(Axis::X) => "Xrotation",
            Channel::Rotation(Axis::Y) => "Yrotation",
            Channel::Rotation(Axis::Z) => "Zrotation",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointChannels {
    pub channels: Vec<Channel>,
    /// Derived from the rotation channels; `None` when the joint has none.
    pub rotation_order: Option<EulerOrder>,
}

impl JointChannels {
    pub fn new(channels: Vec<Channel>) -> Result<Self> {
        let rot: Vec<Axis> = channels
            .iter()
            .filter_map(|c| match c {
                Channel::Rotation(a) => Some(*a),
                _ => None,
            })
            .collect();
        let rotation_order = match rot.len() {
            0 => None,
            3 => Some(
                EulerOrder::from_axes([rot[0], rot[1], rot[2]])
                    .ok_or_else(|| Error::UnsupportedChannel(format!("rotation order {rot:?}")))?,
            ),
            _ => return Err(Error::UnsupportedChannel(format!("{} rotation channels", rot.len()))),
        };
        Ok(Self { channels, rotation_order })
    }

    /// Root layout: translation then rotation in the given order.
    pub fn root(order: EulerOrder) -> Self {
        let mut channels = vec![Channel::Position(Axis::X), Channel::Position(Axis::Y), Channel::Position(Axis::Z)];
        channels.extend(order.axes().map(Channel::Rotation));
        Self { channels, rotation_order: Some(order) }
    }

    pub fn rotation_only(order: EulerOrder) -> Self {
        Self { channels: order.axes().map(Channel::Rotation).to_vec(), rotation_order: Some(order) }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BvhDocument {
    pub skeleton: Skeleton,
    pub root_offset: Vec3,
    pub end_sites: Vec<Option<Vec3>>,
    pub channels: Vec<JointChannels>,
    /// `frames x total_channels`, values exactly as stored (degrees).
    pub motion: Vec<Vec<f64>>,
    pub frame_time: f64,
}

struct Tokens<'a> {
    items: Vec<(usize, &'a str)>,
    pos: usize,
}

impl<'a> Tokens<'a> {
    fn new(text: &'a str) -> Self {
        let items = text.lines().enumerate().flat_map(|(i, l)| l.split_whitespace().map(move |w| (i + 1, w))).collect();
        Self { items, pos: 0 }
    }

    fn line(&self) -> usize {
        self.items.get(self.pos).or(self.items.last()).map_or(0, |t| t.0)
    }

    fn err<T>(&self, message: impl Into<String>) -> Result<T> {
        Err(Error::Syntax { line: self.line(), message: message.into() })
    }

    fn peek(&self) -> Option<&'a str> {
        self.items.get(self.pos).map(|t| t.1)
    }

    fn next(&mut self) -> Result<&'a str> {
        match self.items.get(self.pos) {
            Some(t) => {
                self.pos += 1;
                Ok(t.1)
            }
            None => self.err("unexpected end of file"),
        }
    }

    fn expect(&mut self, word: &str) -> Result<()> {
        let got = self.next()?;
        if got != word {
            self.pos -= 1;
            return self.err(format!("expected `{word}`, found `{got}`"));
        }
        Ok(())
    }

    fn number(&mut self) -> Result<f64> {
        let w = self.next()?;
        w.parse().or_else(|_| {
            self.pos -= 1;
            self.err(format!("expected a number, found `{w}`"))
        })
    }

    fn count(&mut self) -> Result<usize> {
        let w = self.next()?;
        w.parse().or_else(|_| {
            self.pos -= 1;
            self.err(format!("expected a count, found `{w}`"))
        })
    }
}

struct Builder {
    parents: Vec<Option<usize>>,
    offsets: Vec<Vec3>,
    names: Vec<String>,
    end_sites: Vec<Option<Vec3>>,
    channels: Vec<JointChannels>,
}

pub fn parse_bvh(text: &str) -> Result<BvhDocument> {
    let mut tok = Tokens::new(text);
    tok.expect("HIERARCHY")?;
    tok.expect("ROOT")?;
    let mut b = Builder { parents: vec![], offsets: vec![], names: vec![], end_sites: vec![], channels: vec![] };
    parse_joint(&mut tok, &mut b, None)?;

    tok.expect("MOTION")?;
    tok.expect("Frames:")?;
    let frames = tok.count()?;
    tok.expect("Frame")?;
    tok.expect("Time:")?;
    let frame_time = tok.number()?;
    if !(frame_time > 0.0) {
        return tok.err("frame time must be positive");
    }
    let width: usize = b.channels.iter().map(|c| c.channels.len()).sum();
    let mut motion = Vec::with_capacity(frames);
    for _ in 0..frames {
        let row = (0..width).map(|_| tok.number()).collect::<Result<Vec<_>>>()?;
        motion.push(row);
    }
    if let Some(extra) = tok.peek() {
        return tok.err(format!("unexpected trailing token `{extra}`"));
    }

    let root_offset = b.offsets[0];
    b.offsets[0] = [0.0; 3];
    let skeleton = Skeleton::new(b.parents, b.offsets, b.names)?;
    Ok(BvhDocument { skeleton, root_offset, end_sites: b.end_sites, channels: b.channels, motion, frame_time })
}

fn parse_offset(tok: &mut Tokens<'_>) -> Result<Vec3> {
    tok.expect("OFFSET")?;
    Ok([tok.number()?, tok.number()?, tok.number()?])
}

fn parse_joint(tok: &mut Tokens<'_>, b: &mut Builder, parent: Option<usize>) -> Result<()> {
    let name = tok.next()?.to_string();
    tok.expect("{")?;
    let offset = parse_offset(tok)?;
    tok.expect("CHANNELS")?;
    let n = tok.count()?;
    let mut chans = Vec::with_capacity(n);
    for _ in 0..n {
        chans.push(Channel::parse(tok.next()?)?);
    }
    let idx = b.parents.len();
    b.parents.push(parent);
    b.offsets.push(offset);
    b.names.push(name);
    b.end_sites.push(None);
    b.channels.push(JointChannels::new(chans)?);
    loop {
        match tok.next()? {
            "JOINT" => parse_joint(tok, b, Some(idx))?,
            "End" => {
                tok.expect("Site")?;
                tok.expect("{")?;
                let off = parse_offset(tok)?;
                tok.expect("}")?;
                b.end_sites[idx] = Some(off);
            }
            "}" => return Ok(()),
            other => {
                tok.pos -= 1;
                return tok.err(format!("unexpected `{other}` in joint `{}`", b.names[idx]));
            }
        }
    }
}

impl BvhDocument {
    pub fn num_frames(&self) -> usize {
        self.motion.len()
    }

    /// Local-coordinate sequence: row 0 of each pose is the root position,
    /// other rows are per-frame bone offsets.
    pub fn to_sequence(&self) -> Result<MotionSequence> {
        let skel = &self.skeleton;
        let mut frames = Vec::with_capacity(self.motion.len());
        for row in &self.motion {
            let mut positions = skel.offsets.clone();
            positions[0] = self.root_offset;
            let mut rotations = vec![Quat::IDENTITY; skel.num_joints()];
            let mut col = 0;
            for (j, jc) in self.channels.iter().enumerate() {
                let mut euler = [0.0; 3];
                let mut r = 0;
                for ch in &jc.channels {
                    let v = row[col];
                    col += 1;
                    match ch {
                        Channel::Position(a) => positions[j][*a as usize] = v,
                        Channel::Rotation(_) => {
                            euler[r] = v.to_radians();
                            r += 1;
                        }
                    }
                }
                if let Some(order) = jc.rotation_order {
                    rotations[j] = Quat::from_euler(order, euler);
                }
            }
            frames.push(Pose { positions, rotations });
        }
        MotionSequence::new(frames, 1.0 / self.frame_time, Coord::Local)
    }

    /// Builds a document for `seq` (local coordinates) with the given channel
    /// layout.
    pub fn from_sequence(skeleton: &Skeleton, seq: &MotionSequence, channels: Vec<JointChannels>) -> Result<Self> {
        if seq.coord != Coord::Local {
            return Err(Error::DimensionMismatch("BVH output needs a local-coordinate sequence".into()));
        }
        if channels.len() != skeleton.num_joints() || seq.num_joints() != skeleton.num_joints() {
            return Err(Error::DimensionMismatch(format!(
                "skeleton has {} joints, sequence {}, channel layout {}",
                skeleton.num_joints(),
                seq.num_joints(),
                channels.len()
            )));
        }
        let motion = seq
            .frames
            .iter()
            .map(|f| {
                let mut row = Vec::new();
                for (j, jc) in channels.iter().enumerate() {
                    let euler = jc.rotation_order.map(|o| f.rotations[j].to_euler(o)).unwrap_or([0.0; 3]);
                    let mut r = 0;
                    for ch in &jc.channels {
                        row.push(match ch {
                            Channel::Position(a) => f.positions[j][*a as usize],
                            Channel::Rotation(_) => {
                                r += 1;
                                euler[r - 1].to_degrees()
                            }
                        });
                    }
                }
                row
            })
            .collect();
        Ok(Self {
            skeleton: skeleton.clone(),
            root_offset: seq.frames.first().map_or([0.0; 3], |f| f.positions[0]),
            end_sites: vec![None; skeleton.num_joints()],
            channels,
            motion,
            frame_time: 1.0 / seq.frame_rate,
        })
    }

    /// Standard layout: root `X/Y/Zposition` + `ZYX` rotations, other joints
    /// `ZYX` rotations.
    pub fn default_channels(joints: usize) -> Vec<JointChannels> {
        (0..joints)
            .map(|j| {
                if j == 0 {
                    JointChannels::root(EulerOrder::Zyx)
                } else {
                    JointChannels::rotation_only(EulerOrder::Zyx)
                }
            })
            .collect()
    }

    pub fn to_bvh_string(&self) -> String {
        let mut out = String::from("HIERARCHY\n");
        self.write_joint(&mut out, 0, 0);
        let _ = writeln!(out, "MOTION\nFrames: {}\nFrame Time: {:.8}", self.motion.len(), self.frame_time);
        for row in &self.motion {
            let line: Vec<String> = row.iter().map(|v| format!("{v:.6}")).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        out
    }

    fn write_joint(&self, out: &mut String, j: usize, depth: usize) {
        let pad = "  ".repeat(depth);
        let kind = if j == 0 { "ROOT" } else { "JOINT" };
        let off = if j == 0 { self.root_offset } else { self.skeleton.offsets[j] };
        let _ = writeln!(out, "{pad}{kind} {}\n{pad}{{", self.skeleton.names[j]);
        let _ = writeln!(out, "{pad}  OFFSET {:.6} {:.6} {:.6}", off[0], off[1], off[2]);
        let names: Vec<&str> = self.channels[j].channels.iter().map(|c| c.name()).collect();
        let _ = writeln!(out, "{pad}  CHANNELS {} {}", names.len(), names.join(" "));
        for c in self.skeleton.children(j) {
            self.write_joint(out, c, depth + 1);
        }
        if let Some(e) = self.end_sites[j] {
            let _ = writeln!(
                out,
                "{pad}  End Site\n{pad}  {{\n{pad}    OFFSET {:.6} {:.6} {:.6}\n{pad}  }}",
                e[0], e[1], e[2]
            );
        }
        let _ = writeln!(out, "{pad}}}");
    }
}
