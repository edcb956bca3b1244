//! NTU-style skeleton sequences: parsing, serialization, frame sampling and
//! dataset splits.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Joints per skeleton in the Kinect V2 layout.
pub const NUM_JOINTS: usize = 25;

/// Frames per sample after sampling.
pub const DEFAULT_FRAMES: usize = 25;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Joint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Joint {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Joint { x, y, z }
    }

    pub fn axis(&self, axis: usize) -> f64 {
        match axis {
            0 => self.x,
            1 => self.y,
            2 => self.z,
            _ => panic!("axis {axis} out of range"),
        }
    }

    pub fn axis_mut(&mut self, axis: usize) -> &mut f64 {
        match axis {
            0 => &mut self.x,
            1 => &mut self.y,
            2 => &mut self.z,
            _ => panic!("axis {axis} out of range"),
        }
    }
}

/// One frame: the 25 joints in canonical Kinect order.
#[derive(Clone, Debug, PartialEq)]
pub struct SkeletonFrame {
    pub joints: [Joint; NUM_JOINTS],
}

impl Default for SkeletonFrame {
    fn default() -> Self {
        SkeletonFrame {
            joints: [Joint::default(); NUM_JOINTS],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ActionSequence {
    pub frames: Vec<SkeletonFrame>,
    pub label: usize,
    pub subject_id: u32,
    pub camera_id: u32,
    pub source_id: String,
}

/// Fields decoded from an `SsssCcccPpppRrrrAaaa` file name.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FileMeta {
    pub setup: u32,
    pub camera: u32,
    pub subject: u32,
    pub replication: u32,
    pub action: u32,
}

impl FileMeta {
    pub fn source_id(&self) -> String {
        format!(
            "S{:03}C{:03}P{:03}R{:03}A{:03}",
            self.setup, self.camera, self.subject, self.replication, self.action
        )
    }
}

/// Decodes the metadata of a skeleton file name; any directory prefix and
/// extension are ignored.
pub fn parse_filename(name: &str) -> Result<FileMeta> {
    let stem = Path::new(name)
        .file_name()
        .and_then(|s| s.to_str())
        .unwrap_or(name);
    let stem = stem.split('.').next().unwrap_or(stem);
    let bad = || Error::Filename(name.to_string());
    if stem.len() != 20 {
        return Err(bad());
    }
    let mut fields = [0u32; 5];
    for (i, tag) in ['S', 'C', 'P', 'R', 'A'].into_iter().enumerate() {
        let chunk = &stem[i * 4..i * 4 + 4];
        let mut chars = chunk.chars();
        if chars.next() != Some(tag) || !chars.as_str().bytes().all(|b| b.is_ascii_digit()) {
            return Err(bad());
        }
        fields[i] = chars.as_str().parse().map_err(|_| bad())?;
    }
    Ok(FileMeta {
        setup: fields[0],
        camera: fields[1],
        subject: fields[2],
        replication: fields[3],
        action: fields[4],
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionClass {
    pub name: String,
    /// 1-based action id as used in the `Aaaa` file name field.
    pub action_id: u32,
}

/// Maps dataset action ids to contiguous class indices.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassTable {
    pub classes: Vec<ActionClass>,
}

impl Default for ClassTable {
    /// The fourteen single-person daily actions, with their NTU RGB+D ids.
    fn default() -> Self {
        let table = [
            ("pick up", 6),
            ("sit down", 8),
            ("stand up", 9),
            ("put on jacket", 14),
            ("hand waving", 23),
            ("take off jacket", 15),
            ("put on a shoe", 16),
            ("put on glasses", 18),
            ("take off glasses", 19),
            ("put on hat/cap", 20),
            ("take off hat/cap", 21),
            ("cheer up", 22),
            ("hopping", 26),
            ("jump up", 27),
        ];
        ClassTable {
            classes: table
                .iter()
                .map(|&(name, action_id)| ActionClass {
                    name: name.to_string(),
                    action_id,
                })
                .collect(),
        }
    }
}

impl ClassTable {
    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn class_of(&self, action_id: u32) -> Option<usize> {
        self.classes.iter().position(|c| c.action_id == action_id)
    }

    pub fn action_id(&self, class: usize) -> Option<u32> {
        self.classes.get(class).map(|c| c.action_id)
    }

    pub fn name(&self, class: usize) -> Option<&str> {
        self.classes.get(class).map(|c| c.name.as_str())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let table: ClassTable = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let mut seen = BTreeSet::new();
        for c in &table.classes {
            if !seen.insert(c.action_id) {
                return Err(Error::Config(format!("duplicate action id {}", c.action_id)));
            }
        }
        if table.is_empty() {
            return Err(Error::Config("class table is empty".into()));
        }
        Ok(table)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("class table serializes")
    }
}

/// Result of parsing one file: a usable sequence, or an action outside the
/// configured classes.
#[derive(Clone, Debug, PartialEq)]
pub enum Parsed {
    Sequence(ActionSequence),
    Skipped { action_id: u32 },
}

struct Lines<'a> {
    iter: std::iter::Enumerate<std::str::Lines<'a>>,
    source: &'a str,
    line: usize,
}

impl<'a> Lines<'a> {
    fn next_line(&mut self) -> Result<&'a str> {
        loop {
            match self.iter.next() {
                Some((i, l)) => {
                    self.line = i + 1;
                    if !l.trim().is_empty() {
                        return Ok(l);
                    }
                }
                None => {
                    return Err(self.err(format!("unexpected end of file after line {}", self.line)));
                }
            }
        }
    }

    fn count(&mut self, what: &str) -> Result<usize> {
        let line = self.next_line()?;
        line.trim()
            .parse()
            .map_err(|_| self.err(format!("expected {what}, found {:?}", line.trim())))
    }

    fn err(&self, message: String) -> Error {
        Error::Parse {
            source_id: self.source.to_string(),
            line: self.line,
            message,
        }
    }
}

/// Parses one file in the NTU skeleton text layout.
///
/// When a frame holds several bodies only the first body record is kept;
/// frames without bodies are dropped.
pub fn parse_skeleton(bytes: &[u8], filename: &str, classes: &ClassTable) -> Result<Parsed> {
    let meta = parse_filename(filename)?;
    let Some(label) = classes.class_of(meta.action) else {
        return Ok(Parsed::Skipped {
            action_id: meta.action,
        });
    };
    let source_id = meta.source_id();
    let text = std::str::from_utf8(bytes).map_err(|e| Error::Parse {
        source_id: source_id.clone(),
        line: 0,
        message: format!("not utf-8: {e}"),
    })?;
    let mut lines = Lines {
        iter: text.lines().enumerate(),
        source: &source_id,
        line: 0,
    };

    let frame_count = lines.count("frame count")?;
    let mut frames = Vec::with_capacity(frame_count);
    for _ in 0..frame_count {
        let bodies = lines.count("body count")?;
        let mut kept: Option<SkeletonFrame> = None;
        for _ in 0..bodies {
            let info = lines.next_line()?;
            if info.split_whitespace().count() != 10 {
                return Err(lines.err("body info line must have 10 fields".into()));
            }
            let joint_count = lines.count("joint count")?;
            if joint_count != NUM_JOINTS {
                return Err(lines.err(format!("expected {NUM_JOINTS} joints, found {joint_count}")));
            }
            let mut frame = SkeletonFrame::default();
            for joint in frame.joints.iter_mut() {
                let line = lines.next_line()?;
                let fields: Vec<&str> = line.split_whitespace().collect();
                if fields.len() != 12 {
                    return Err(lines.err(format!("joint line has {} fields, expected 12", fields.len())));
                }
                let mut xyz = [0.0; 3];
                for (v, tok) in xyz.iter_mut().zip(&fields) {
                    *v = tok
                        .parse::<f64>()
                        .ok()
                        .filter(|v| v.is_finite())
                        .ok_or_else(|| lines.err(format!("non-numeric coordinate {tok:?}")))?;
                }
                for tok in &fields[3..] {
                    tok.parse::<f64>()
                        .map_err(|_| lines.err(format!("non-numeric field {tok:?}")))?;
                }
                *joint = Joint::new(xyz[0], xyz[1], xyz[2]);
            }
            kept.get_or_insert(frame);
        }
        if let Some(frame) = kept {
            frames.push(frame);
        }
    }
    if frames.is_empty() {
        return Err(Error::EmptySequence(source_id));
    }
    Ok(Parsed::Sequence(ActionSequence {
        frames,
        label,
        subject_id: meta.subject,
        camera_id: meta.camera,
        source_id,
    }))
}

/// Renders a sequence in the skeleton text layout with one body per frame.
/// Fields other than the coordinates are written as zeros.
pub fn serialize_skeleton(seq: &ActionSequence) -> String {
    let mut out = String::new();
    writeln!(out, "{}", seq.frames.len()).unwrap();
    for frame in &seq.frames {
        out.push_str("1\n0 0 0 0 0 0 0 0 0 2\n");
        writeln!(out, "{NUM_JOINTS}").unwrap();
        for j in &frame.joints {
            writeln!(out, "{:?} {:?} {:?} 0 0 0 0 0 0 0 0 2", j.x, j.y, j.z).unwrap();
        }
    }
    out
}

/// Reads every `*.skeleton` file of a directory in file-name order, keeping
/// the configured classes. Returns the sequences and the number skipped.
pub fn load_dir(dir: &Path, classes: &ClassTable) -> Result<(Vec<ActionSequence>, usize)> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "skeleton"))
        .collect();
    paths.sort();
    let mut seqs = Vec::new();
    let mut skipped = 0;
    for path in paths {
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        match parse_skeleton(&bytes, name, classes)? {
            Parsed::Sequence(s) => seqs.push(s),
            Parsed::Skipped { .. } => skipped += 1,
        }
    }
    Ok((seqs, skipped))
}

/// Resamples to exactly `frames` frames.
///
/// Long sequences (at least three frames per output frame) keep the first
/// frame of every consecutive triple; medium ones are resampled uniformly at
/// `floor(i * len / frames)`; short ones are padded with their last frame.
pub fn sample_frames(seq: &ActionSequence, frames: usize) -> Result<ActionSequence> {
    let len = seq.frames.len();
    if len == 0 {
        return Err(Error::EmptySequence(seq.source_id.clone()));
    }
    if frames == 0 {
        return Err(Error::Contract("frame count must be positive".into()));
    }
    let indices: Vec<usize> = if len >= 3 * frames {
        (0..frames).map(|i| 3 * i).collect()
    } else if len >= frames {
        (0..frames).map(|i| i * len / frames).collect()
    } else {
        (0..frames).map(|i| i.min(len - 1)).collect()
    };
    Ok(ActionSequence {
        frames: indices.iter().map(|&i| seq.frames[i].clone()).collect(),
        ..seq.clone_meta()
    })
}

impl ActionSequence {
    fn clone_meta(&self) -> ActionSequence {
        ActionSequence {
            frames: Vec::new(),
            label: self.label,
            subject_id: self.subject_id,
            camera_id: self.camera_id,
            source_id: self.source_id.clone(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitKind {
    CrossSubject,
    CrossView,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPolicy {
    pub kind: SplitKind,
    #[serde(default)]
    pub train_subjects: BTreeSet<u32>,
    #[serde(default)]
    pub train_cameras: BTreeSet<u32>,
}

impl SplitPolicy {
    /// The published NTU RGB+D cross-subject training performers.
    pub fn cross_subject() -> Self {
        SplitPolicy {
            kind: SplitKind::CrossSubject,
            train_subjects: [1, 2, 4, 5, 8, 9, 13, 14, 15, 16, 17, 18, 19, 25, 27, 28, 31, 34, 35, 38]
                .into_iter()
                .collect(),
            train_cameras: BTreeSet::new(),
        }
    }

    /// Cameras 2 and 3 train, camera 1 tests.
    pub fn cross_view() -> Self {
        SplitPolicy {
            kind: SplitKind::CrossView,
            train_subjects: BTreeSet::new(),
            train_cameras: [2, 3].into_iter().collect(),
        }
    }

    pub fn is_train(&self, seq: &ActionSequence) -> bool {
        match self.kind {
            SplitKind::CrossSubject => self.train_subjects.contains(&seq.subject_id),
            SplitKind::CrossView => self.train_cameras.contains(&seq.camera_id),
        }
    }
}

/// Partitions samples into (train, test), preserving order.
pub fn split_dataset(
    samples: Vec<ActionSequence>,
    policy: &SplitPolicy,
) -> (Vec<ActionSequence>, Vec<ActionSequence>) {
    samples.into_iter().partition(|s| policy.is_train(s))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture(frames: usize, bodies: usize) -> String {
        let mut s = format!("{frames}\n");
        for f in 0..frames {
            s += &format!("{bodies}\n");
            for b in 0..bodies {
                s += "72057594037931101 0 1 1 1 1 0 0.02 0.3 2\n25\n";
                for j in 0..25 {
                    s += &format!(
                        "{} {} {} 277.1 191.4 1036.3 519.7 -0.2 0.03 0.9 -0.1 2\n",
                        0.1 * j as f64 + b as f64,
                        -0.5 + 0.01 * f as f64,
                        3.5
                    );
                }
            }
        }
        s
    }

    #[test]
    fn parses_two_frame_hand_waving_file() {
        let text = fixture(2, 1);
        let parsed = parse_skeleton(text.as_bytes(), "S001C002P003R001A023.skeleton", &ClassTable::default()).unwrap();
        let Parsed::Sequence(seq) = parsed else { panic!("skipped") };
        assert_eq!(seq.frames.len(), 2);
        assert_eq!(seq.camera_id, 2);
        assert_eq!(seq.subject_id, 3);
        assert_eq!(ClassTable::default().name(seq.label), Some("hand waving"));
        assert_eq!(seq.frames[1].joints[3], Joint::new(0.1 * 3.0, -0.49, 3.5));
    }

    #[test]
    fn keeps_first_body_of_multi_body_frames() {
        let text = fixture(1, 2);
        let Parsed::Sequence(seq) = parse_skeleton(text.as_bytes(), "S001C001P001R001A006", &ClassTable::default()).unwrap() else {
            panic!()
        };
        assert_eq!(seq.frames[0].joints[0].x, 0.0);
    }

    #[test]
    fn zero_frames_is_empty_sequence() {
        let err = parse_skeleton(b"0\n", "S001C001P001R001A006.skeleton", &ClassTable::default()).unwrap_err();
        assert!(matches!(err, Error::EmptySequence(_)));
    }

    #[test]
    fn frames_without_bodies_are_empty_sequence() {
        let err = parse_skeleton(b"2\n0\n0\n", "S001C001P001R001A006.skeleton", &ClassTable::default()).unwrap_err();
        assert!(matches!(err, Error::EmptySequence(_)));
    }

    #[test]
    fn non_numeric_token_names_its_line() {
        let mut text = fixture(1, 1);
        text = text.replacen("3.5 277.1", "abc 277.1", 1);
        let err = parse_skeleton(text.as_bytes(), "S001C001P001R001A006.skeleton", &ClassTable::default()).unwrap_err();
        match err {
            Error::Parse { line, message, .. } => {
                assert_eq!(line, 5);
                assert!(message.contains("abc"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn wrong_joint_count_is_parse_error() {
        let text = fixture(1, 1).replacen("\n25\n", "\n24\n", 1);
        let err = parse_skeleton(text.as_bytes(), "S001C001P001R001A006.skeleton", &ClassTable::default()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 4, .. }));
    }

    #[test]
    fn unlisted_action_is_skipped() {
        let text = fixture(1, 1);
        let parsed = parse_skeleton(text.as_bytes(), "S001C001P001R001A050.skeleton", &ClassTable::default()).unwrap();
        assert_eq!(parsed, Parsed::Skipped { action_id: 50 });
    }

    #[test]
    fn bad_filenames_are_rejected() {
        for name in ["S001C001P001R001.skeleton", "X001C001P001R001A001", "S0a1C001P001R001A001"] {
            assert!(matches!(parse_filename(name), Err(Error::Filename(_))), "{name}");
        }
        assert_eq!(parse_filename("data/S017C003P020R002A060.skeleton").unwrap().action, 60);
    }

    #[test]
    fn class_table_round_trips_through_toml() {
        let t = ClassTable::default();
        assert_eq!(ClassTable::from_toml(&t.to_toml()).unwrap(), t);
        assert_eq!(t.len(), 14);
    }

    fn seq_with(n: usize) -> ActionSequence {
        ActionSequence {
            frames: (0..n)
                .map(|i| {
                    let mut f = SkeletonFrame::default();
                    f.joints[0].x = i as f64;
                    f
                })
                .collect(),
            label: 0,
            subject_id: 1,
            camera_id: 1,
            source_id: "t".into(),
        }
    }

    fn frame_ids(s: &ActionSequence) -> Vec<usize> {
        s.frames.iter().map(|f| f.joints[0].x as usize).collect()
    }

    #[test]
    fn sampling_takes_first_of_each_triple() {
        let out = sample_frames(&seq_with(75), 25).unwrap();
        assert_eq!(frame_ids(&out), (0..25).map(|i| 3 * i).collect::<Vec<_>>());
    }

    #[test]
    fn sampling_identity_and_padding() {
        assert_eq!(sample_frames(&seq_with(25), 25).unwrap(), seq_with(25));
        let padded = frame_ids(&sample_frames(&seq_with(10), 25).unwrap());
        let mut expect: Vec<usize> = (0..10).collect();
        expect.extend(std::iter::repeat_n(9, 15));
        assert_eq!(padded, expect);
    }

    #[test]
    fn sampling_medium_length_is_uniform() {
        let out = frame_ids(&sample_frames(&seq_with(50), 25).unwrap());
        assert_eq!(out, (0..25).map(|i| 2 * i).collect::<Vec<_>>());
    }

    #[test]
    fn split_policies() {
        let mut a = seq_with(1);
        a.camera_id = 1;
        let mut b = seq_with(1);
        b.camera_id = 3;
        let (train, test) = split_dataset(vec![a.clone(), b.clone()], &SplitPolicy::cross_view());
        assert_eq!((train, test), (vec![b], vec![a.clone()]));

        let empty = SplitPolicy {
            kind: SplitKind::CrossSubject,
            train_subjects: BTreeSet::new(),
            train_cameras: BTreeSet::new(),
        };
        let (train, test) = split_dataset(vec![a.clone()], &empty);
        assert!(train.is_empty() && test.len() == 1);

        let only = SplitPolicy {
            train_subjects: [a.subject_id].into_iter().collect(),
            ..empty
        };
        let (train, test) = split_dataset(vec![a.clone()], &only);
        assert_eq!((train, test.len()), (vec![a], 0));
    }
}
