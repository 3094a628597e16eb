//! MOTChallenge-style annotation files, sequence metadata, dataset statistics
//! and framerate resampling.
//!
//! An annotation line has nine comma-separated numeric fields. Two field
//! orders are supported:
//!
//! * [`FieldOrder::IdFirst`]: `id, frame, left, top, width, height, conf, category, visibility`
//! * [`FieldOrder::Standard`]: `frame, id, left, top, width, height, conf, category, visibility`
//!
//! The writer emits one canonical form: no spaces, integral values without a
//! decimal point, everything else with two decimals.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{aspect_ratio, BBox};

#[derive(Debug, Error)]
pub enum MotIoError {
    #[error("line {line}: expected 9 fields, found {found}")]
    FieldCount { line: usize, found: usize },
    #[error("line {line}, field {field}: {message}")]
    Field { line: usize, field: usize, message: String },
    #[error("line {line}: duplicate record for frame {frame}, id {track_id}")]
    Duplicate { line: usize, frame: u32, track_id: u32 },
    #[error("frame_count {frame_count} is smaller than the largest frame index {max_frame}")]
    FrameCount { frame_count: u32, max_frame: u32 },
    #[error("resample factor must be at least 1")]
    ZeroFactor,
    #[error("invalid sequence metadata: {0}")]
    Meta(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Column order of the first two fields.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldOrder {
    /// `id, frame, ...`
    #[default]
    IdFirst,
    /// `frame, id, ...`
    Standard,
}

impl FromStr for FieldOrder {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "id-first" | "id_first" => Ok(FieldOrder::IdFirst),
            "standard" => Ok(FieldOrder::Standard),
            other => Err(format!("unknown field order `{other}`")),
        }
    }
}

/// One annotated (or tracked, or detected) box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    /// 1-based frame index.
    pub frame: u32,
    /// Positive track identity.
    pub track_id: u32,
    pub bbox: BBox,
    pub confidence: f64,
    pub category: i32,
    pub visibility: f64,
}

impl AnnotationRecord {
    /// A record with confidence, category and visibility all 1.
    pub fn new(frame: u32, track_id: u32, bbox: BBox) -> Self {
        Self {
            frame,
            track_id,
            bbox,
            confidence: 1.0,
            category: 1,
            visibility: 1.0,
        }
    }
}

fn field_err(line: usize, field: usize, message: impl Into<String>) -> MotIoError {
    MotIoError::Field {
        line,
        field,
        message: message.into(),
    }
}

fn parse_positive_int(raw: f64, line: usize, field: usize, what: &str) -> Result<u32, MotIoError> {
    if raw.fract() != 0.0 || raw < 1.0 || raw > u32::MAX as f64 {
        return Err(field_err(
            line,
            field,
            format!("{what} must be a positive integer, got {raw}"),
        ));
    }
    Ok(raw as u32)
}

fn parse_unit(raw: f64, line: usize, field: usize, what: &str) -> Result<f64, MotIoError> {
    if !(0.0..=1.0).contains(&raw) {
        return Err(field_err(line, field, format!("{what} must lie in [0, 1], got {raw}")));
    }
    Ok(raw)
}

fn parse_line(text: &str, line: usize, order: FieldOrder) -> Result<AnnotationRecord, MotIoError> {
    let parts: Vec<&str> = text.split(',').map(str::trim).collect();
    if parts.len() != 9 {
        return Err(MotIoError::FieldCount {
            line,
            found: parts.len(),
        });
    }
    let mut values = [0.0f64; 9];
    for (i, part) in parts.iter().enumerate() {
        let v: f64 = part
            .parse()
            .map_err(|_| field_err(line, i + 1, format!("not a number: `{part}`")))?;
        if !v.is_finite() {
            return Err(field_err(line, i + 1, "value must be finite"));
        }
        values[i] = v;
    }
    let (id_field, frame_field) = match order {
        FieldOrder::IdFirst => (0, 1),
        FieldOrder::Standard => (1, 0),
    };
    let track_id = parse_positive_int(values[id_field], line, id_field + 1, "track id")?;
    let frame = parse_positive_int(values[frame_field], line, frame_field + 1, "frame")?;
    let bbox = BBox::new(values[2], values[3], values[4], values[5]).map_err(|e| field_err(line, 3, e.to_string()))?;
    let confidence = parse_unit(values[6], line, 7, "confidence")?;
    if values[7].fract() != 0.0 || values[7].abs() > i32::MAX as f64 {
        return Err(field_err(line, 8, "category must be an integer"));
    }
    let visibility = parse_unit(values[8], line, 9, "visibility")?;
    Ok(AnnotationRecord {
        frame,
        track_id,
        bbox,
        confidence,
        category: values[7] as i32,
        visibility,
    })
}

/// Parses an annotation stream. Blank lines are skipped; line numbers in
/// errors are 1-based.
pub fn parse_annotations(text: &str, order: FieldOrder) -> Result<Vec<AnnotationRecord>, MotIoError> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let rec = parse_line(raw, line, order)?;
        if !seen.insert((rec.frame, rec.track_id)) {
            return Err(MotIoError::Duplicate {
                line,
                frame: rec.frame,
                track_id: rec.track_id,
            });
        }
        out.push(rec);
    }
    Ok(out)
}

/// Canonical numeric formatting: values are rounded to 2 decimals, then
/// printed bare if integral and with 2 decimals otherwise.
pub fn format_number(v: f64) -> String {
    let text = format!("{v:.2}");
    match text.strip_suffix(".00") {
        Some("-0") => "0".to_string(),
        Some(int) => int.to_string(),
        None => text,
    }
}

pub fn write_annotations(records: &[AnnotationRecord], order: FieldOrder) -> String {
    let mut out = String::with_capacity(records.len() * 32);
    for r in records {
        let (first, second) = match order {
            FieldOrder::IdFirst => (r.track_id, r.frame),
            FieldOrder::Standard => (r.frame, r.track_id),
        };
        let _ = writeln!(
            out,
            "{first},{second},{},{},{},{},{},{},{}",
            format_number(r.bbox.left()),
            format_number(r.bbox.top()),
            format_number(r.bbox.width()),
            format_number(r.bbox.height()),
            format_number(r.confidence),
            r.category,
            format_number(r.visibility),
        );
    }
    out
}

pub fn read_annotation_file(path: impl AsRef<Path>, order: FieldOrder) -> Result<Vec<AnnotationRecord>, MotIoError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| MotIoError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_annotations(&text, order)
}

pub fn write_annotation_file(
    path: impl AsRef<Path>,
    records: &[AnnotationRecord],
    order: FieldOrder,
) -> Result<(), MotIoError> {
    let path = path.as_ref();
    std::fs::write(path, write_annotations(records, order)).map_err(|source| MotIoError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Groups records by frame, frames in ascending order.
pub fn group_by_frame(records: &[AnnotationRecord]) -> BTreeMap<u32, Vec<AnnotationRecord>> {
    let mut map: BTreeMap<u32, Vec<AnnotationRecord>> = BTreeMap::new();
    for r in records {
        map.entry(r.frame).or_default().push(*r);
    }
    map
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum View {
    Slope,
    Overhead,
}

/// Per-sequence metadata, stored as a small TOML key-value file with keys
/// `name`, `fps`, `frames`, `width`, `height`, `view`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceMeta {
    pub name: String,
    pub fps: f64,
    #[serde(rename = "frames")]
    pub frame_count: u32,
    pub width: u32,
    pub height: u32,
    pub view: View,
}

impl SequenceMeta {
    pub fn validate(&self) -> Result<(), MotIoError> {
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return Err(MotIoError::Meta(format!("fps must be positive, got {}", self.fps)));
        }
        if self.frame_count < 1 {
            return Err(MotIoError::Meta("frames must be at least 1".into()));
        }
        Ok(())
    }

    pub fn resolution(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn from_toml_str(text: &str) -> Result<Self, MotIoError> {
        let meta: SequenceMeta = toml::from_str(text).map_err(|e| MotIoError::Meta(e.to_string()))?;
        meta.validate()?;
        Ok(meta)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("sequence metadata is always serializable")
    }

    /// Metadata after keeping every `factor`-th frame.
    pub fn resampled(&self, factor: u32) -> Result<Self, MotIoError> {
        if factor == 0 {
            return Err(MotIoError::ZeroFactor);
        }
        Ok(Self {
            fps: self.fps / factor as f64,
            frame_count: self.frame_count.div_ceil(factor),
            ..self.clone()
        })
    }
}

pub const RATIO_BIN_WIDTH: f64 = 0.1;

/// Aggregate statistics over one annotation set.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetStats {
    pub boxes: usize,
    pub frames: u32,
    pub density: f64,
    pub tracks: usize,
    /// `(bin lower edge, count)` for height/width ratios, bins of width 0.1
    /// starting at 0; only non-empty bins are listed.
    pub ratio_histogram: Vec<(f64, usize)>,
    #[serde(skip)]
    sorted_ratios: Vec<f64>,
}

impl DatasetStats {
    /// Fraction of boxes whose height/width ratio lies in `[lo, hi]`.
    pub fn ratio_mass_in(&self, lo: f64, hi: f64) -> f64 {
        if self.sorted_ratios.is_empty() {
            return 0.0;
        }
        let start = self.sorted_ratios.partition_point(|&r| r < lo);
        let end = self.sorted_ratios.partition_point(|&r| r <= hi);
        end.saturating_sub(start) as f64 / self.sorted_ratios.len() as f64
    }
}

pub fn density(boxes: usize, frames: u32) -> f64 {
    boxes as f64 / frames as f64
}

fn ratio_bin(r: f64) -> usize {
    // small epsilon keeps exact multiples of 0.1 in their own bin
    ((r / RATIO_BIN_WIDTH) + 1e-9).floor().max(0.0) as usize
}

pub fn compute_stats(records: &[AnnotationRecord], frame_count: u32) -> Result<DatasetStats, MotIoError> {
    let max_frame = records.iter().map(|r| r.frame).max().unwrap_or(0);
    if frame_count < max_frame || frame_count == 0 {
        return Err(MotIoError::FrameCount { frame_count, max_frame });
    }
    let tracks = records.iter().map(|r| r.track_id).collect::<HashSet<_>>().len();
    let mut sorted_ratios: Vec<f64> = records.iter().map(|r| aspect_ratio(&r.bbox)).collect();
    sorted_ratios.sort_by(f64::total_cmp);
    let mut bins: BTreeMap<usize, usize> = BTreeMap::new();
    for &r in &sorted_ratios {
        *bins.entry(ratio_bin(r)).or_default() += 1;
    }
    Ok(DatasetStats {
        boxes: records.len(),
        frames: frame_count,
        density: density(records.len(), frame_count),
        tracks,
        ratio_histogram: bins.into_iter().map(|(b, c)| (b as f64 * RATIO_BIN_WIDTH, c)).collect(),
        sorted_ratios,
    })
}

/// Keeps frames `f` with `(f - 1) % factor == 0` and renumbers them from 1.
pub fn resample_framerate(records: &[AnnotationRecord], factor: u32) -> Result<Vec<AnnotationRecord>, MotIoError> {
    if factor == 0 {
        return Err(MotIoError::ZeroFactor);
    }
    Ok(records
        .iter()
        .filter(|r| (r.frame - 1) % factor == 0)
        .map(|r| AnnotationRecord {
            frame: (r.frame - 1) / factor + 1,
            ..*r
        })
        .collect())
}

/// Splits a sequence into train (first half of the frames) and test (the
/// rest). With an odd frame count the train half gets the extra frame.
/// Frame numbers are left untouched.
pub fn split_train_test(
    records: &[AnnotationRecord],
    frame_count: u32,
) -> (Vec<AnnotationRecord>, Vec<AnnotationRecord>) {
    let cut = frame_count.div_ceil(2);
    records.iter().partition(|r| r.frame <= cut)
}
