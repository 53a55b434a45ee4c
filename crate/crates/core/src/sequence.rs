//! Labeled time series, action sequences and segment lists, and the
//! conversions between them.
//!
//! Class indices are 0-based. A vocabulary with `c` classes reserves `c` for
//! the start-of-sequence token and `c + 1` for the end-of-sequence token; the
//! reserved tokens never appear inside an [`ActionSequence`].

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Class index.
pub type ClassId = usize;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelVocab {
    classes: Vec<String>,
}

impl LabelVocab {
    pub fn new<S: Into<String>>(classes: impl IntoIterator<Item = S>) -> Result<Self> {
        let classes: Vec<String> = classes.into_iter().map(Into::into).collect();
        if classes.is_empty() {
            return Err(Error::Config("vocabulary needs at least one class".into()));
        }
        for (i, name) in classes.iter().enumerate() {
            if name.is_empty() {
                return Err(Error::Config(format!("class {i} has an empty name")));
            }
            if classes[..i].contains(name) {
                return Err(Error::Config(format!("duplicate class name {name:?}")));
            }
        }
        Ok(Self { classes })
    }

    /// Vocabulary with generic names `c0`, `c1`, ...
    pub fn numbered(c: usize) -> Result<Self> {
        Self::new((0..c).map(|i| format!("c{i}")))
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn name(&self, id: ClassId) -> Option<&str> {
        self.classes.get(id).map(String::as_str)
    }

    pub fn index_of(&self, name: &str) -> Option<ClassId> {
        self.classes.iter().position(|c| c == name)
    }

    pub fn start_of_sequence(&self) -> usize {
        self.classes.len()
    }

    pub fn end_of_sequence(&self) -> usize {
        self.classes.len() + 1
    }
}

/// Ordered, duration-free list of actions.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ActionSequence {
    items: Vec<ClassId>,
}

impl ActionSequence {
    /// Builds a sequence over `num_classes` classes. With `canonical` set,
    /// consecutive duplicates are rejected.
    pub fn new(items: Vec<ClassId>, num_classes: usize, canonical: bool) -> Result<Self> {
        if let Some(&bad) = items.iter().find(|&&i| i >= num_classes) {
            return Err(Error::Format(format!(
                "class index {bad} out of range for {num_classes} classes"
            )));
        }
        if canonical && items.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Format(
                "canonical sequence contains consecutive duplicates".into(),
            ));
        }
        Ok(Self { items })
    }

    /// Wraps indices without range checks.
    pub fn from_vec(items: Vec<ClassId>) -> Self {
        Self { items }
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn items(&self) -> &[ClassId] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn is_canonical(&self) -> bool {
        !self.items.windows(2).any(|w| w[0] == w[1])
    }

    pub fn into_vec(self) -> Vec<ClassId> {
        self.items
    }

    pub fn first(&self) -> Option<ClassId> {
        self.items.first().copied()
    }

    pub fn last(&self) -> Option<ClassId> {
        self.items.last().copied()
    }
}

impl From<Vec<ClassId>> for ActionSequence {
    fn from(items: Vec<ClassId>) -> Self {
        Self::from_vec(items)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameLabeling {
    pub labels: Vec<ClassId>,
    pub frame_rate: f64,
}

impl FrameLabeling {
    pub fn new(labels: Vec<ClassId>, frame_rate: f64) -> Result<Self> {
        if !(frame_rate.is_finite() && frame_rate > 0.0) {
            return Err(Error::Config(format!("frame rate must be positive, got {frame_rate}")));
        }
        Ok(Self { labels, frame_rate })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn check_classes(&self, num_classes: usize) -> Result<()> {
        match self.labels.iter().find(|&&l| l >= num_classes) {
            Some(bad) => Err(Error::Format(format!(
                "frame label {bad} out of range for {num_classes} classes"
            ))),
            None => Ok(()),
        }
    }
}

/// Row-major `T x D` feature matrix with its frame rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSequence {
    frames: Vec<f64>,
    dim: usize,
    pub frame_rate: f64,
    pub metadata: BTreeMap<String, String>,
}

impl FeatureSequence {
    pub fn new(frames: Vec<f64>, dim: usize, frame_rate: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Shape("feature dimension must be at least 1".into()));
        }
        if frames.len() % dim != 0 {
            return Err(Error::Shape(format!(
                "{} values do not form rows of width {dim}",
                frames.len()
            )));
        }
        if frames.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("feature sequence".into()));
        }
        if !(frame_rate.is_finite() && frame_rate > 0.0) {
            return Err(Error::Config(format!("frame rate must be positive, got {frame_rate}")));
        }
        Ok(Self {
            frames,
            dim,
            frame_rate,
            metadata: BTreeMap::new(),
        })
    }

    pub fn from_rows(rows: &[Vec<f64>], frame_rate: f64) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::Shape("ragged feature rows".into()));
        }
        Self::new(rows.concat(), dim, frame_rate)
    }

    pub fn len(&self) -> usize {
        self.frames.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.frames[t * self.dim..(t + 1) * self.dim]
    }

    pub fn data(&self) -> &[f64] {
        &self.frames
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.frames.chunks_exact(self.dim)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub class: ClassId,
    pub start: usize,
    pub end: usize,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }
}

/// Contiguous run-length view of a frame labeling.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SegmentList {
    segments: Vec<Segment>,
}

impl SegmentList {
    pub fn new(segments: Vec<Segment>) -> Result<Self> {
        let mut expected_start = 0;
        for (i, s) in segments.iter().enumerate() {
            if s.start != expected_start {
                return Err(Error::Segments(format!(
                    "segment {i} starts at {} but previous ends at {expected_start}",
                    s.start
                )));
            }
            if s.is_empty() {
                return Err(Error::Segments(format!("segment {i} is empty")));
            }
            if i > 0 && segments[i - 1].class == s.class {
                return Err(Error::Segments(format!(
                    "segments {} and {i} share class {}",
                    i - 1,
                    s.class
                )));
            }
            expected_start = s.end;
        }
        Ok(Self { segments })
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn total_frames(&self) -> usize {
        self.segments.last().map_or(0, |s| s.end)
    }
}

/// Removes label repetitions at consecutive frames.
pub fn collapse(f: &FrameLabeling) -> ActionSequence {
    collapse_labels(&f.labels)
}

pub fn collapse_labels(labels: &[ClassId]) -> ActionSequence {
    let mut items: Vec<ClassId> = Vec::new();
    for &l in labels {
        if items.last() != Some(&l) {
            items.push(l);
        }
    }
    ActionSequence::from_vec(items)
}

pub fn segments_from_frames(f: &FrameLabeling) -> SegmentList {
    segments_from_labels(&f.labels)
}

pub fn segments_from_labels(labels: &[ClassId]) -> SegmentList {
    let mut segments: Vec<Segment> = Vec::new();
    for (t, &l) in labels.iter().enumerate() {
        match segments.last_mut() {
            Some(s) if s.class == l => s.end = t + 1,
            _ => segments.push(Segment {
                class: l,
                start: t,
                end: t + 1,
            }),
        }
    }
    SegmentList { segments }
}

pub fn frames_from_segments(s: &SegmentList, frame_rate: f64) -> Result<FrameLabeling> {
    // re-validate: a SegmentList may have been deserialized
    let s = SegmentList::new(s.segments.clone())?;
    let mut labels = Vec::with_capacity(s.total_frames());
    for seg in s.segments() {
        labels.extend(std::iter::repeat_n(seg.class, seg.len()));
    }
    FrameLabeling::new(labels, frame_rate)
}

/// Frames at which the label differs from the previous frame.
pub fn boundaries_of(f: &FrameLabeling) -> Vec<usize> {
    boundaries_of_labels(&f.labels)
}

pub fn boundaries_of_labels(labels: &[ClassId]) -> Vec<usize> {
    (1..labels.len())
        .filter(|&i| labels[i] != labels[i - 1])
        .collect()
}

/// Features paired with frame labels; the action sequence is derived.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub id: String,
    pub features: FeatureSequence,
    pub frame_labels: FrameLabeling,
    sequence: ActionSequence,
}

impl LabeledSample {
    pub fn new(
        id: impl Into<String>,
        features: FeatureSequence,
        frame_labels: FrameLabeling,
    ) -> Result<Self> {
        if features.len() != frame_labels.len() {
            return Err(Error::Shape(format!(
                "{} feature frames but {} labels",
                features.len(),
                frame_labels.len()
            )));
        }
        let sequence = collapse(&frame_labels);
        Ok(Self {
            id: id.into(),
            features,
            frame_labels,
            sequence,
        })
    }

    pub fn sequence(&self) -> &ActionSequence {
        &self.sequence
    }

    pub fn len(&self) -> usize {
        self.frame_labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frame_labels.is_empty()
    }
}
