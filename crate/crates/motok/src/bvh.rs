//! Parsing and serialization of BVH motion capture files.
//!
//! BVH stores a skeleton as a joint hierarchy with fixed rest-pose offsets
//! and motion as per-frame channel values (Euler angles in degrees plus root
//! translation). Parsing preserves the file's joint order (depth-first) and
//! the exact rotation channel order, which defines how Euler angles compose.

use crate::Mat3;
use thiserror::Error;

/// One degree of freedom of a joint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Channel {
    Xposition,
    Yposition,
    Zposition,
    Xrotation,
    Yrotation,
    Zrotation,
}

impl Channel {
    fn from_token(tok: &str) -> Option<Channel> {
        match tok {
            "Xposition" => Some(Channel::Xposition),
            "Yposition" => Some(Channel::Yposition),
            "Zposition" => Some(Channel::Zposition),
            "Xrotation" => Some(Channel::Xrotation),
            "Yrotation" => Some(Channel::Yrotation),
            "Zrotation" => Some(Channel::Zrotation),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Channel::Xposition => "Xposition",
            Channel::Yposition => "Yposition",
            Channel::Zposition => "Zposition",
            Channel::Xrotation => "Xrotation",
            Channel::Yrotation => "Yrotation",
            Channel::Zrotation => "Zrotation",
        }
    }

    pub fn is_rotation(self) -> bool {
        matches!(
            self,
            Channel::Xrotation | Channel::Yrotation | Channel::Zrotation
        )
    }

    /// Axis index: X = 0, Y = 1, Z = 2.
    pub fn axis(self) -> usize {
        match self {
            Channel::Xposition | Channel::Xrotation => 0,
            Channel::Yposition | Channel::Yrotation => 1,
            Channel::Zposition | Channel::Zrotation => 2,
        }
    }
}

/// A joint (or end site) in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct BvhJoint {
    pub name: String,
    /// Index of the parent joint in [`BvhDocument::joints`]; `None` for the root.
    pub parent: Option<usize>,
    /// Rest-pose offset from the parent, in file units.
    pub offset: [f64; 3],
    /// Channels exactly as declared; empty for end sites.
    pub channels: Vec<Channel>,
    pub is_end_site: bool,
}

impl BvhJoint {
    /// Rotation channel axes in file order, if the joint has exactly three.
    pub fn rotation_order(&self) -> Option<[usize; 3]> {
        let rot: Vec<usize> = self
            .channels
            .iter()
            .filter(|c| c.is_rotation())
            .map(|c| c.axis())
            .collect();
        match rot[..] {
            [a, b, c] => Some([a, b, c]),
            _ => None,
        }
    }
}

/// A parsed BVH document: hierarchy plus raw motion channel values.
///
/// Angles in `frames` are degrees and translations are file units; nothing is
/// converted at parse time so a write reproduces the input.
#[derive(Debug, Clone, PartialEq)]
pub struct BvhDocument {
    /// Joints in depth-first file order, end sites included.
    pub joints: Vec<BvhJoint>,
    pub frame_count: usize,
    /// Seconds per frame.
    pub frame_time: f64,
    /// `frame_count` rows of `total_channels` values each.
    pub frames: Vec<Vec<f64>>,
}

impl BvhDocument {
    pub fn total_channels(&self) -> usize {
        self.joints.iter().map(|j| j.channels.len()).sum()
    }

    /// Index of the root joint.
    pub fn root(&self) -> usize {
        self.joints
            .iter()
            .position(|j| j.parent.is_none())
            .expect("document has a root")
    }

    /// Per-joint start index into a frame row.
    pub fn channel_offsets(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.joints.len());
        let mut acc = 0;
        for j in &self.joints {
            out.push(acc);
            acc += j.channels.len();
        }
        out
    }

    /// Children of joint `i`, in file order.
    pub fn children(&self, i: usize) -> Vec<usize> {
        self.joints
            .iter()
            .enumerate()
            .filter(|(_, j)| j.parent == Some(i))
            .map(|(k, _)| k)
            .collect()
    }
}

#[derive(Debug, Error)]
pub enum BvhError {
    #[error("line {line}: malformed header, expected {expected}, found {found:?}")]
    MalformedHeader {
        line: usize,
        expected: &'static str,
        found: String,
    },
    #[error("line {line}: unknown channel name {name:?}")]
    UnknownChannel { line: usize, name: String },
    #[error("line {line}: CHANNELS declares {declared} but lists {listed}")]
    ChannelDeclMismatch {
        line: usize,
        declared: usize,
        listed: usize,
    },
    #[error("line {line}: frame {frame} has {found} values but the hierarchy declares {expected} channels")]
    FrameChannelMismatch {
        line: usize,
        frame: usize,
        expected: usize,
        found: usize,
    },
    #[error("line {line}: second ROOT; a BVH document has a single rooted tree")]
    MultipleRoots { line: usize },
    #[error("missing MOTION section")]
    MissingMotion,
    #[error("line {line}: cannot parse number from {token:?}")]
    BadNumber { line: usize, token: String },
    #[error("MOTION declares {declared} frames but {found} frame rows follow")]
    FrameCountMismatch { declared: usize, found: usize },
    #[error("line {line}: unexpected end of input while reading {section}")]
    UnexpectedEof { line: usize, section: &'static str },
    #[error("frame time must be positive, got {0}")]
    NonPositiveFrameTime(f64),
}

struct Tokens<'a> {
    toks: Vec<(usize, &'a str)>,
    pos: usize,
}

impl<'a> Tokens<'a> {
    fn new(text: &'a str) -> Self {
        let mut toks = Vec::new();
        for (i, line) in text.lines().enumerate() {
            for tok in line.split_whitespace() {
                toks.push((i + 1, tok));
            }
        }
        Tokens { toks, pos: 0 }
    }

    fn peek(&self) -> Option<(usize, &'a str)> {
        self.toks.get(self.pos).copied()
    }

    fn next(&mut self, section: &'static str) -> Result<(usize, &'a str), BvhError> {
        let t = self.toks.get(self.pos).copied().ok_or(BvhError::UnexpectedEof {
            line: self.toks.last().map_or(0, |t| t.0),
            section,
        })?;
        self.pos += 1;
        Ok(t)
    }

    fn expect(&mut self, word: &'static str) -> Result<usize, BvhError> {
        let (line, tok) = self.next(word)?;
        if tok == word {
            Ok(line)
        } else {
            Err(BvhError::MalformedHeader {
                line,
                expected: word,
                found: tok.to_string(),
            })
        }
    }

    fn number(&mut self, section: &'static str) -> Result<(usize, f64), BvhError> {
        let (line, tok) = self.next(section)?;
        tok.parse::<f64>()
            .map(|v| (line, v))
            .map_err(|_| BvhError::BadNumber {
                line,
                token: tok.to_string(),
            })
    }
}

/// Parse a complete BVH document (HIERARCHY + MOTION sections).
pub fn parse_bvh(text: &str) -> Result<BvhDocument, BvhError> {
    let mut t = Tokens::new(text);
    t.expect("HIERARCHY")?;
    t.expect("ROOT")?;
    let mut joints = Vec::new();
    parse_joint(&mut t, None, false, &mut joints)?;

    // Exactly one root: a second ROOT before MOTION is an error.
    loop {
        match t.peek() {
            Some((line, "ROOT")) => return Err(BvhError::MultipleRoots { line }),
            Some((_, "MOTION")) => break,
            Some((line, tok)) => {
                return Err(BvhError::MalformedHeader {
                    line,
                    expected: "MOTION",
                    found: tok.to_string(),
                })
            }
            None => return Err(BvhError::MissingMotion),
        }
    }
    t.expect("MOTION")?;
    expect_keyword(&mut t, "Frames")?;
    let (_, frames_decl) = t.number("Frames")?;
    let frame_count = frames_decl as usize;
    expect_keyword(&mut t, "Frame")?;
    expect_keyword(&mut t, "Time")?;
    let (ft_line, frame_time) = t.number("Frame Time")?;
    if !(frame_time > 0.0) {
        return Err(BvhError::NonPositiveFrameTime(frame_time));
    }
    let _ = ft_line;

    let total: usize = joints.iter().map(|j| j.channels.len()).sum();
    let mut frames = Vec::with_capacity(frame_count);
    // Frame rows are line-delimited; a row with the wrong number of values is
    // reported against its own line.
    let mut rows: Vec<(usize, Vec<f64>)> = Vec::new();
    let mut cur_line = 0usize;
    while let Some((line, tok)) = t.peek() {
        let v = tok.parse::<f64>().map_err(|_| BvhError::BadNumber {
            line,
            token: tok.to_string(),
        })?;
        if line != cur_line {
            rows.push((line, Vec::new()));
            cur_line = line;
        }
        rows.last_mut().unwrap().1.push(v);
        t.pos += 1;
    }
    for (i, (line, row)) in rows.iter().enumerate() {
        if row.len() != total {
            return Err(BvhError::FrameChannelMismatch {
                line: *line,
                frame: i,
                expected: total,
                found: row.len(),
            });
        }
    }
    if rows.len() != frame_count {
        return Err(BvhError::FrameCountMismatch {
            declared: frame_count,
            found: rows.len(),
        });
    }
    frames.extend(rows.into_iter().map(|(_, r)| r));

    Ok(BvhDocument {
        joints,
        frame_count,
        frame_time,
        frames,
    })
}

/// Accepts `Frames:` as one token or `Frames` `:` as two.
fn expect_keyword(t: &mut Tokens, word: &'static str) -> Result<(), BvhError> {
    let (line, tok) = t.next(word)?;
    let bare = tok.strip_suffix(':').unwrap_or(tok);
    if bare != word {
        return Err(BvhError::MalformedHeader {
            line,
            expected: word,
            found: tok.to_string(),
        });
    }
    if bare == tok {
        // Colon may be its own token ("Frame Time :").
        if let Some((_, ":")) = t.peek() {
            t.pos += 1;
        }
    }
    Ok(())
}

fn parse_joint(
    t: &mut Tokens,
    parent: Option<usize>,
    is_end_site: bool,
    joints: &mut Vec<BvhJoint>,
) -> Result<(), BvhError> {
    // Caller consumed the introducing keyword (ROOT/JOINT/End Site); for
    // named joints the name comes next.
    let name = if is_end_site {
        let parent_name = parent.map(|p| joints[p].name.clone()).unwrap_or_default();
        format!("{parent_name}_end")
    } else {
        t.next("joint name")?.1.to_string()
    };
    t.expect("{")?;
    let idx = joints.len();
    joints.push(BvhJoint {
        name,
        parent,
        offset: [0.0; 3],
        channels: Vec::new(),
        is_end_site,
    });

    t.expect("OFFSET")?;
    let mut offset = [0.0; 3];
    for v in &mut offset {
        *v = t.number("OFFSET")?.1;
    }
    joints[idx].offset = offset;

    if !is_end_site {
        let chan_line = t.expect("CHANNELS")?;
        let (_, declared) = t.number("CHANNELS")?;
        let declared = declared as usize;
        let mut channels = Vec::with_capacity(declared);
        for _ in 0..declared {
            let (line, tok) = t.next("channel name")?;
            match Channel::from_token(tok) {
                Some(c) => channels.push(c),
                None => {
                    // A structural token here means fewer channels were
                    // listed than declared.
                    if matches!(tok, "JOINT" | "End" | "}" | "{") {
                        return Err(BvhError::ChannelDeclMismatch {
                            line: chan_line,
                            declared,
                            listed: channels.len(),
                        });
                    }
                    return Err(BvhError::UnknownChannel {
                        line,
                        name: tok.to_string(),
                    });
                }
            }
        }
        joints[idx].channels = channels;
    }

    loop {
        let (line, tok) = t.next("joint body")?;
        match tok {
            "}" => return Ok(()),
            "JOINT" => parse_joint(t, Some(idx), false, joints)?,
            "End" => {
                let (line2, tok2) = t.next("End Site")?;
                if tok2 != "Site" {
                    return Err(BvhError::MalformedHeader {
                        line: line2,
                        expected: "Site",
                        found: tok2.to_string(),
                    });
                }
                parse_joint(t, Some(idx), true, joints)?;
            }
            other => {
                return Err(BvhError::MalformedHeader {
                    line,
                    expected: "JOINT, End Site, or }",
                    found: other.to_string(),
                })
            }
        }
    }
}

/// Serialize a document back to BVH text.
///
/// Output is deterministic: tab indentation, 6 decimal places for offsets and
/// frame values, shortest round-trip formatting for the frame time.
pub fn write_bvh(doc: &BvhDocument) -> String {
    let mut out = String::new();
    out.push_str("HIERARCHY\n");
    let root = doc.root();
    write_joint(doc, root, 0, &mut out);
    out.push_str("MOTION\n");
    out.push_str(&format!("Frames: {}\n", doc.frame_count));
    out.push_str(&format!("Frame Time: {}\n", doc.frame_time));
    for row in &doc.frames {
        let vals: Vec<String> = row.iter().map(|v| format!("{v:.6}")).collect();
        out.push_str(&vals.join(" "));
        out.push('\n');
    }
    out
}

fn write_joint(doc: &BvhDocument, idx: usize, depth: usize, out: &mut String) {
    let j = &doc.joints[idx];
    let ind = "\t".repeat(depth);
    if j.is_end_site {
        out.push_str(&format!("{ind}End Site\n"));
    } else if j.parent.is_none() {
        out.push_str(&format!("{ind}ROOT {}\n", j.name));
    } else {
        out.push_str(&format!("{ind}JOINT {}\n", j.name));
    }
    out.push_str(&format!("{ind}{{\n"));
    let ind2 = "\t".repeat(depth + 1);
    out.push_str(&format!(
        "{ind2}OFFSET {:.6} {:.6} {:.6}\n",
        j.offset[0], j.offset[1], j.offset[2]
    ));
    if !j.is_end_site {
        let names: Vec<&str> = j.channels.iter().map(|c| c.name()).collect();
        out.push_str(&format!(
            "{ind2}CHANNELS {} {}\n",
            j.channels.len(),
            names.join(" ")
        ));
        for c in doc.children(idx) {
            write_joint(doc, c, depth + 1, out);
        }
    }
    out.push_str(&format!("{ind}}}\n"));
}

/// Rotation matrix about a coordinate axis (X = 0, Y = 1, Z = 2), radians.
pub fn axis_rotation(axis: usize, radians: f64) -> Mat3 {
    let (s, c) = radians.sin_cos();
    match axis {
        0 => Mat3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c),
        1 => Mat3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c),
        2 => Mat3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0),
        _ => panic!("axis out of range: {axis}"),
    }
}

/// Compose Euler angles (degrees) into a rotation matrix.
///
/// `order` lists axis indices in file channel order; rotations are intrinsic
/// and applied in that order, matching mainstream BVH consumers.
pub fn euler_to_matrix(angles_deg: [f64; 3], order: [usize; 3]) -> Mat3 {
    let mut r = Mat3::identity();
    for (angle, axis) in angles_deg.iter().zip(order.iter()) {
        r *= axis_rotation(*axis, angle.to_radians());
    }
    r
}

/// Parity of an axis permutation: +1 for cyclic (XYZ, YZX, ZXY), -1 otherwise.
fn permutation_sign(order: [usize; 3]) -> f64 {
    match order {
        [0, 1, 2] | [1, 2, 0] | [2, 0, 1] => 1.0,
        _ => -1.0,
    }
}

/// Recover Euler angles (degrees) from a rotation matrix for a given channel
/// order. Inverse of [`euler_to_matrix`] away from gimbal lock; at lock the
/// third angle is set to 0 and the first absorbs the remaining rotation.
pub fn matrix_to_euler(rot: &Mat3, order: [usize; 3]) -> [f64; 3] {
    let [i, j, k] = order;
    let sign = permutation_sign(order);
    let s = (sign * rot[(i, k)]).clamp(-1.0, 1.0);
    let middle = s.asin();
    if 1.0 - s.abs() < 1e-14 {
        // Gimbal lock: first and third rotations share an axis. Fix the third
        // at 0 and extract the first from R * B(middle)^T, a rotation about
        // axis `i`.
        let a = rot * axis_rotation(j, middle).transpose();
        let (u, v) = ((i + 1) % 3, (i + 2) % 3);
        let first = a[(v, u)].atan2(a[(u, u)]);
        [first.to_degrees(), middle.to_degrees(), 0.0]
    } else {
        let first = (-sign * rot[(j, k)]).atan2(rot[(k, k)]);
        let third = (-sign * rot[(i, j)]).atan2(rot[(i, i)]);
        [first.to_degrees(), middle.to_degrees(), third.to_degrees()]
    }
}
