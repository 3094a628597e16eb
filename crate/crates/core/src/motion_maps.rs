//! The five per-frame input maps: RGB, frame difference, optical flow, depth
//! and density.
//!
//! Frame difference and flow are computed here. Depth and density come from
//! a [`SourceProvider`]; built-ins cover synthetic generators, density from
//! annotated boxes, and maps loaded from disk (for anyone exporting outputs
//! of a real depth or density network).
//!
//! Map files are raw little-endian `f32` values, channel-major planes, each
//! plane row-major, next to a JSON sidecar `{"width": W, "height": H,
//! "channels": C}` with the same stem and a `.json` extension.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::BBox;

#[derive(Debug, Error)]
pub enum MapError {
    #[error("dimension mismatch: expected {expected:?}, got {actual:?}")]
    Dimensions {
        expected: (usize, usize),
        actual: (usize, usize),
    },
    #[error("invalid frame: {0}")]
    InvalidFrame(String),
    #[error("frame {width}x{height} is smaller than one {block}x{block} block")]
    TooSmall { width: usize, height: usize, block: usize },
    #[error("invalid flow configuration: {0}")]
    FlowConfig(String),
    #[error("{source_name} source: {inner}")]
    Source {
        source_name: &'static str,
        inner: Box<MapError>,
    },
    #[error("{path}: {message}")]
    File { path: String, message: String },
}

impl MapError {
    fn in_source(self, source_name: &'static str) -> MapError {
        MapError::Source {
            source_name,
            inner: Box::new(self),
        }
    }
}

/// A planar image with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageFrame {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl ImageFrame {
    /// `data` holds `channels` planes of `height * width` values each.
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Result<Self, MapError> {
        if width == 0 || height == 0 {
            return Err(MapError::InvalidFrame("zero-sized frame".into()));
        }
        if channels != 1 && channels != 3 {
            return Err(MapError::InvalidFrame(format!(
                "channels must be 1 or 3, got {channels}"
            )));
        }
        if data.len() != width * height * channels {
            return Err(MapError::InvalidFrame(format!(
                "expected {} values, got {}",
                width * height * channels,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(MapError::InvalidFrame("non-finite value".into()));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f32) -> Result<Self, MapError> {
        Self::new(width, height, channels, vec![value; width * height * channels])
    }

    /// Single-channel frame from a per-pixel function of `(x, y)`.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f32) -> Result<Self, MapError> {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self::new(width, height, 1, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.width * self.height;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn get(&self, c: usize, x: usize, y: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    /// Rec. 601 luminance; single-channel frames are returned as-is.
    pub fn luminance(&self) -> ImageFrame {
        if self.channels == 1 {
            return self.clone();
        }
        let (r, g, b) = (self.plane(0), self.plane(1), self.plane(2));
        let data = r
            .iter()
            .zip(g)
            .zip(b)
            .map(|((&r, &g), &b)| 0.299 * r + 0.587 * g + 0.114 * b)
            .collect();
        ImageFrame {
            height: self.height,
            width: self.width,
            channels: 1,
            data,
        }
    }

    pub fn total(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum()
    }
}

/// Dense per-pixel displacement in pixels/frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    height: usize,
    width: usize,
    u: Vec<f32>,
    v: Vec<f32>,
}

impl FlowField {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            height,
            width,
            u: vec![0.0; width * height],
            v: vec![0.0; width * height],
        }
    }

    /// Builds a field from separate `u` and `v` planes, row-major.
    pub fn new(width: usize, height: usize, u: Vec<f32>, v: Vec<f32>) -> Result<Self, MapError> {
        if width == 0 || height == 0 || u.len() != width * height || v.len() != width * height {
            return Err(MapError::InvalidFrame(format!(
                "flow planes of {} and {} values for a {width}x{height} grid",
                u.len(),
                v.len()
            )));
        }
        if u.iter().chain(&v).any(|x| !x.is_finite()) {
            return Err(MapError::InvalidFrame("non-finite flow".into()));
        }
        Ok(Self { height, width, u, v })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn u(&self) -> &[f32] {
        &self.u
    }

    pub fn v(&self) -> &[f32] {
        &self.v
    }

    pub fn at(&self, x: usize, y: usize) -> (f32, f32) {
        let i = y * self.width + x;
        (self.u[i], self.v[i])
    }

    pub fn max_magnitude(&self) -> f32 {
        self.u
            .iter()
            .zip(&self.v)
            .map(|(u, v)| (u * u + v * v).sqrt())
            .fold(0.0, f32::max)
    }

    /// `(u, v)` as two channel-major planes.
    pub fn to_planes(&self) -> Vec<f32> {
        let mut out = self.u.clone();
        out.extend_from_slice(&self.v);
        out
    }
}

fn check_same_dims(a: (usize, usize), b: (usize, usize)) -> Result<(), MapError> {
    if a != b {
        return Err(MapError::Dimensions { expected: a, actual: b });
    }
    Ok(())
}

/// `|curr - prev|` on luminance.
pub fn frame_difference(curr: &ImageFrame, prev: &ImageFrame) -> Result<ImageFrame, MapError> {
    check_same_dims(curr.dims(), prev.dims())?;
    let (a, b) = (curr.luminance(), prev.luminance());
    let data = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (x - y).abs().clamp(0.0, 1.0))
        .collect();
    ImageFrame::new(curr.width, curr.height, 1, data)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowConfig {
    /// Side of the square matching window; odd, at least 3.
    pub block_size: usize,
    /// Displacements searched at each pyramid level, per axis.
    pub search_radius: usize,
    pub pyramid_levels: usize,
    /// Subtract each window's mean before taking absolute differences, which
    /// makes matching insensitive to global brightness changes.
    pub zero_mean: bool,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            block_size: 5,
            search_radius: 2,
            pyramid_levels: 3,
            zero_mean: true,
        }
    }
}

impl FlowConfig {
    fn validate(&self) -> Result<(), MapError> {
        if self.block_size < 3 || self.block_size.is_multiple_of(2) {
            return Err(MapError::FlowConfig(format!(
                "block size must be odd and at least 3, got {}",
                self.block_size
            )));
        }
        if self.pyramid_levels == 0 {
            return Err(MapError::FlowConfig("at least one pyramid level is required".into()));
        }
        Ok(())
    }
}

/// Single-channel f64 plane used internally by the pyramid.
struct Plane {
    w: usize,
    h: usize,
    px: Vec<f64>,
}

impl Plane {
    fn from_frame(f: &ImageFrame) -> Self {
        let l = f.luminance();
        Plane {
            w: l.width,
            h: l.height,
            px: l.data.iter().map(|&v| v as f64).collect(),
        }
    }

    /// Clamped (edge-replicating) sample.
    fn at(&self, x: isize, y: isize) -> f64 {
        let x = x.clamp(0, self.w as isize - 1) as usize;
        let y = y.clamp(0, self.h as isize - 1) as usize;
        self.px[y * self.w + x]
    }

    /// 2x2 box-filter downsampling.
    fn half(&self) -> Plane {
        let (w, h) = (self.w / 2, self.h / 2);
        let mut px = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                let (sx, sy) = (2 * x, 2 * y);
                let s = self.px[sy * self.w + sx]
                    + self.px[sy * self.w + sx + 1]
                    + self.px[(sy + 1) * self.w + sx]
                    + self.px[(sy + 1) * self.w + sx + 1];
                px.push(s / 4.0);
            }
        }
        Plane { w, h, px }
    }
}

const COST_TIE_EPS: f64 = 1e-9;

/// Integer flow at one level, searched around `init`.
fn match_level(curr: &Plane, prev: &Plane, init: &[(i32, i32)], cfg: &FlowConfig) -> Vec<(i32, i32)> {
    let half = (cfg.block_size / 2) as isize;
    let r = cfg.search_radius as i32;
    let n = (cfg.block_size * cfg.block_size) as f64;
    let mut out = Vec::with_capacity(curr.w * curr.h);
    let mut cur_win = vec![0.0; cfg.block_size * cfg.block_size];
    let mut prev_win = vec![0.0; cfg.block_size * cfg.block_size];
    for y in 0..curr.h as isize {
        for x in 0..curr.w as isize {
            let mut k = 0;
            for dy in -half..=half {
                for dx in -half..=half {
                    cur_win[k] = curr.at(x + dx, y + dy);
                    k += 1;
                }
            }
            let cur_mean = if cfg.zero_mean {
                cur_win.iter().sum::<f64>() / n
            } else {
                0.0
            };
            let (iu, iv) = init[y as usize * curr.w + x as usize];
            let mut best: Option<(f64, i64, (i32, i32))> = None;
            for dv in -r..=r {
                for du in -r..=r {
                    let (u, v) = (iu + du, iv + dv);
                    let mut k = 0;
                    // prev(p - d) ≈ curr(p)
                    for dy in -half..=half {
                        for dx in -half..=half {
                            prev_win[k] = prev.at(x + dx - u as isize, y + dy - v as isize);
                            k += 1;
                        }
                    }
                    let prev_mean = if cfg.zero_mean {
                        prev_win.iter().sum::<f64>() / n
                    } else {
                        0.0
                    };
                    let cost: f64 = cur_win
                        .iter()
                        .zip(&prev_win)
                        .map(|(a, b)| ((a - cur_mean) - (b - prev_mean)).abs())
                        .sum();
                    let mag = (u as i64).pow(2) + (v as i64).pow(2);
                    let better = match best {
                        None => true,
                        Some((bc, bm, bd)) => {
                            if cost < bc - COST_TIE_EPS {
                                true
                            } else if cost <= bc + COST_TIE_EPS {
                                mag < bm || (mag == bm && (u, v) < bd)
                            } else {
                                false
                            }
                        }
                    };
                    if better {
                        best = Some((cost, mag, (u, v)));
                    }
                }
            }
            out.push(best.expect("search window is never empty").2);
        }
    }
    out
}

/// Coarse-to-fine block matching. The result lives on the grid of `curr`:
/// `(u, v)` at `p` means `prev(p - (u, v)) ≈ curr(p)`.
pub fn optical_flow(curr: &ImageFrame, prev: &ImageFrame, cfg: &FlowConfig) -> Result<FlowField, MapError> {
    cfg.validate()?;
    check_same_dims(curr.dims(), prev.dims())?;
    if curr.width < cfg.block_size || curr.height < cfg.block_size {
        return Err(MapError::TooSmall {
            width: curr.width,
            height: curr.height,
            block: cfg.block_size,
        });
    }
    let mut curr_pyr = vec![Plane::from_frame(curr)];
    let mut prev_pyr = vec![Plane::from_frame(prev)];
    while curr_pyr.len() < cfg.pyramid_levels {
        let last = curr_pyr.last().unwrap();
        if last.w / 2 < cfg.block_size || last.h / 2 < cfg.block_size {
            break;
        }
        let next_c = last.half();
        let next_p = prev_pyr.last().unwrap().half();
        curr_pyr.push(next_c);
        prev_pyr.push(next_p);
    }
    let coarsest = curr_pyr.last().unwrap();
    let mut flow = vec![(0i32, 0i32); coarsest.w * coarsest.h];
    for level in (0..curr_pyr.len()).rev() {
        let (c, p) = (&curr_pyr[level], &prev_pyr[level]);
        let init: Vec<(i32, i32)> = if level == curr_pyr.len() - 1 {
            flow.clone()
        } else {
            let coarse = &curr_pyr[level + 1];
            let mut init = Vec::with_capacity(c.w * c.h);
            for y in 0..c.h {
                for x in 0..c.w {
                    let cx = (x / 2).min(coarse.w - 1);
                    let cy = (y / 2).min(coarse.h - 1);
                    let (u, v) = flow[cy * coarse.w + cx];
                    init.push((2 * u, 2 * v));
                }
            }
            init
        };
        flow = match_level(c, p, &init, cfg);
    }
    Ok(FlowField {
        height: curr.height,
        width: curr.width,
        u: flow.iter().map(|&(u, _)| u as f32).collect(),
        v: flow.iter().map(|&(_, v)| v as f32).collect(),
    })
}

/// Kernel width as a fraction of the smaller box side.
pub const DENSITY_SIGMA_SCALE: f64 = 0.3;
/// Kernels are cut off at this many sigmas.
pub const DENSITY_TRUNCATION: f64 = 3.0;

/// Sum of unit-mass truncated Gaussians, one per box center.
///
/// Each kernel is normalized over the in-image pixels of its support, so a
/// box contributes exactly one unit of mass up to rounding.
pub fn density_from_boxes(boxes: &[BBox], width: usize, height: usize) -> Result<ImageFrame, MapError> {
    let mut acc = vec![0.0f64; width * height];
    let mut kernel: Vec<(usize, f64)> = Vec::new();
    for b in boxes {
        let (cx, cy) = b.center();
        let sigma = DENSITY_SIGMA_SCALE * b.width().min(b.height());
        let reach = DENSITY_TRUNCATION * sigma;
        let x0 = ((cx - reach).floor().max(0.0)) as usize;
        let y0 = ((cy - reach).floor().max(0.0)) as usize;
        let x1 = ((cx + reach).ceil().min(width as f64)) as usize;
        let y1 = ((cy + reach).ceil().min(height as f64)) as usize;
        kernel.clear();
        let mut sum = 0.0;
        for y in y0..y1 {
            for x in x0..x1 {
                let dx = x as f64 + 0.5 - cx;
                let dy = y as f64 + 0.5 - cy;
                let d2 = dx * dx + dy * dy;
                if d2 <= reach * reach {
                    let w = (-d2 / (2.0 * sigma * sigma)).exp();
                    kernel.push((y * width + x, w));
                    sum += w;
                }
            }
        }
        if kernel.is_empty() {
            // support smaller than a pixel: put the mass on the nearest pixel
            let x = (cx.floor().max(0.0) as usize).min(width - 1);
            let y = (cy.floor().max(0.0) as usize).min(height - 1);
            kernel.push((y * width + x, 1.0));
            sum = 1.0;
        }
        for &(i, w) in &kernel {
            acc[i] += w / sum;
        }
    }
    ImageFrame::new(width, height, 1, acc.into_iter().map(|v| v as f32).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DepthMode {
    /// Row `r` of `H` has value `r / (H - 1)`.
    VerticalGradient,
    /// Uniform 0.5.
    Constant,
}

pub fn synth_depth(width: usize, height: usize, mode: DepthMode) -> Result<ImageFrame, MapError> {
    match mode {
        DepthMode::Constant => ImageFrame::filled(width, height, 1, 0.5),
        DepthMode::VerticalGradient => {
            let denom = (height.max(2) - 1) as f32;
            ImageFrame::from_fn(width, height, |_, y| y as f32 / denom)
        }
    }
}

/// Reads an 8-bit PNG. Grayscale images give one channel, everything else
/// is converted to RGB.
pub fn read_png_frame(path: impl AsRef<Path>) -> Result<ImageFrame, MapError> {
    let path = path.as_ref();
    let img = image::open(path).map_err(|e| file_err(path, e))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let (channels, raw) = match img.color().channel_count() {
        1 | 2 => (1, img.into_luma8().into_raw()),
        _ => (3, img.into_rgb8().into_raw()),
    };
    // interleaved to planar
    let mut data = vec![0.0f32; w * h * channels];
    for (i, px) in raw.chunks_exact(channels).enumerate() {
        for (c, v) in px.iter().enumerate() {
            data[c * w * h + i] = *v as f32 / 255.0;
        }
    }
    ImageFrame::new(w, h, channels, data).map_err(|e| file_err(path, e))
}

/// Writes a 1- or 3-channel frame as an 8-bit PNG.
pub fn write_png_frame(path: impl AsRef<Path>, frame: &ImageFrame) -> Result<(), MapError> {
    let path = path.as_ref();
    let (w, h) = frame.dims();
    let to_u8 = |v: f32| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    let result = match frame.channels() {
        1 => image::GrayImage::from_fn(w as u32, h as u32, |x, y| {
            image::Luma([to_u8(frame.get(0, x as usize, y as usize))])
        })
        .save(path),
        3 => image::RgbImage::from_fn(w as u32, h as u32, |x, y| {
            image::Rgb([0, 1, 2].map(|c| to_u8(frame.get(c, x as usize, y as usize))))
        })
        .save(path),
        c => return Err(file_err(path, format!("cannot store {c} channels as PNG"))),
    };
    result.map_err(|e| file_err(path, e))
}

#[derive(Debug, Serialize, Deserialize)]
struct MapHeader {
    width: usize,
    height: usize,
    channels: usize,
}

fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

fn file_err(path: &Path, message: impl std::fmt::Display) -> MapError {
    MapError::File {
        path: path.display().to_string(),
        message: message.to_string(),
    }
}

/// Writes raw little-endian f32 planes plus the JSON sidecar.
pub fn write_raw_map(
    path: impl AsRef<Path>,
    width: usize,
    height: usize,
    channels: usize,
    data: &[f32],
) -> Result<(), MapError> {
    let path = path.as_ref();
    if data.len() != width * height * channels {
        return Err(file_err(path, "data length does not match header"));
    }
    let bytes: Vec<u8> = data.iter().flat_map(|v| v.to_le_bytes()).collect();
    std::fs::write(path, bytes).map_err(|e| file_err(path, e))?;
    let header = serde_json::to_string(&MapHeader {
        width,
        height,
        channels,
    })
    .expect("header serializes");
    std::fs::write(sidecar_path(path), header).map_err(|e| file_err(path, e))
}

pub fn write_map(path: impl AsRef<Path>, frame: &ImageFrame) -> Result<(), MapError> {
    write_raw_map(path, frame.width, frame.height, frame.channels, &frame.data)
}

pub fn write_flow(path: impl AsRef<Path>, flow: &FlowField) -> Result<(), MapError> {
    write_raw_map(path, flow.width, flow.height, 2, &flow.to_planes())
}

/// Reads a map file without any normalization: `(width, height, channels, data)`.
pub fn read_raw_map(path: impl AsRef<Path>) -> Result<(usize, usize, usize, Vec<f32>), MapError> {
    let path = path.as_ref();
    let header_text =
        std::fs::read_to_string(sidecar_path(path)).map_err(|e| file_err(path, format!("sidecar: {e}")))?;
    let header: MapHeader = serde_json::from_str(&header_text).map_err(|e| file_err(path, format!("sidecar: {e}")))?;
    let bytes = std::fs::read(path).map_err(|e| file_err(path, e))?;
    let expected = header.width * header.height * header.channels * 4;
    if bytes.len() != expected {
        return Err(file_err(
            path,
            format!("expected {expected} bytes from header, found {}", bytes.len()),
        ));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok((header.width, header.height, header.channels, data))
}

/// Reads an image map and checks its dimensions. Values already inside
/// `[0, 1]` are returned unchanged; otherwise the map is min-max normalized.
pub fn load_map(path: impl AsRef<Path>, width: usize, height: usize) -> Result<ImageFrame, MapError> {
    let path = path.as_ref();
    let (w, h, c, mut data) = read_raw_map(path)?;
    if (w, h) != (width, height) {
        return Err(file_err(
            path,
            format!("header says {w}x{h}, expected {width}x{height}"),
        ));
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(file_err(path, "non-finite value"));
    }
    let (lo, hi) = data.iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
        (lo.min(v), hi.max(v))
    });
    if lo < 0.0 || hi > 1.0 {
        let span = hi - lo;
        for v in &mut data {
            *v = if span > 0.0 { (*v - lo) / span } else { 0.0 };
        }
    }
    ImageFrame::new(w, h, c, data).map_err(|e| file_err(path, e))
}

pub fn load_flow(path: impl AsRef<Path>) -> Result<FlowField, MapError> {
    let path = path.as_ref();
    let (w, h, c, data) = read_raw_map(path)?;
    if c != 2 {
        return Err(file_err(path, format!("flow maps have 2 channels, found {c}")));
    }
    let (u, v) = data.split_at(w * h);
    FlowField::new(w, h, u.to_vec(), v.to_vec()).map_err(|e| file_err(path, e.to_string()))
}

/// Supplies one single-channel map per frame.
pub trait SourceProvider: Send + Sync {
    /// `frame_index` is the 1-based index of `frame` in its sequence.
    fn provide(&self, frame: &ImageFrame, frame_index: u32) -> Result<ImageFrame, MapError>;
}

/// Synthetic depth, independent of frame content.
#[derive(Debug, Clone, Copy)]
pub struct SynthDepthProvider(pub DepthMode);

impl SourceProvider for SynthDepthProvider {
    fn provide(&self, frame: &ImageFrame, _: u32) -> Result<ImageFrame, MapError> {
        synth_depth(frame.width, frame.height, self.0)
    }
}

/// The same map for every frame.
#[derive(Debug, Clone)]
pub struct ConstantProvider(pub ImageFrame);

impl SourceProvider for ConstantProvider {
    fn provide(&self, _: &ImageFrame, _: u32) -> Result<ImageFrame, MapError> {
        Ok(self.0.clone())
    }
}

/// Density maps rendered from per-frame boxes (e.g. annotations).
#[derive(Debug, Clone, Default)]
pub struct BoxDensityProvider {
    pub boxes_by_frame: std::collections::BTreeMap<u32, Vec<BBox>>,
}

impl SourceProvider for BoxDensityProvider {
    fn provide(&self, frame: &ImageFrame, frame_index: u32) -> Result<ImageFrame, MapError> {
        let boxes = self.boxes_by_frame.get(&frame_index).map(Vec::as_slice).unwrap_or(&[]);
        density_from_boxes(boxes, frame.width, frame.height)
    }
}

/// Maps read from `dir/<prefix><frame:06>.bin`.
#[derive(Debug, Clone)]
pub struct FileProvider {
    pub dir: PathBuf,
    pub prefix: String,
}

impl FileProvider {
    pub fn path_for(&self, frame_index: u32) -> PathBuf {
        self.dir.join(format!("{}{:06}.bin", self.prefix, frame_index))
    }
}

impl SourceProvider for FileProvider {
    fn provide(&self, frame: &ImageFrame, frame_index: u32) -> Result<ImageFrame, MapError> {
        load_map(self.path_for(frame_index), frame.width, frame.height)
    }
}

/// Which of the five inputs a map is.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Diff,
    Flow,
    Rgb,
    Depth,
    Density,
}

impl Source {
    /// Concatenation order used by the fusion network: motion sources first.
    pub const ALL: [Source; 5] = [Source::Diff, Source::Flow, Source::Rgb, Source::Depth, Source::Density];

    pub fn name(self) -> &'static str {
        match self {
            Source::Diff => "diff",
            Source::Flow => "flow",
            Source::Rgb => "rgb",
            Source::Depth => "depth",
            Source::Density => "density",
        }
    }
}

/// The five aligned maps for one frame. All members share width and height.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceStack {
    rgb: ImageFrame,
    diff: ImageFrame,
    flow: FlowField,
    depth: ImageFrame,
    density: ImageFrame,
}

impl SourceStack {
    pub fn new(
        rgb: ImageFrame,
        diff: ImageFrame,
        flow: FlowField,
        depth: ImageFrame,
        density: ImageFrame,
    ) -> Result<Self, MapError> {
        let dims = rgb.dims();
        let single = |f: &ImageFrame, name: &'static str| -> Result<(), MapError> {
            check_same_dims(dims, f.dims()).map_err(|e| e.in_source(name))?;
            if f.channels != 1 {
                return Err(MapError::InvalidFrame(format!("expected 1 channel, got {}", f.channels)).in_source(name));
            }
            Ok(())
        };
        single(&diff, "diff")?;
        check_same_dims(dims, flow.dims()).map_err(|e| e.in_source("flow"))?;
        single(&depth, "depth")?;
        single(&density, "density")?;
        Ok(Self {
            rgb,
            diff,
            flow,
            depth,
            density,
        })
    }

    pub fn rgb(&self) -> &ImageFrame {
        &self.rgb
    }

    pub fn diff(&self) -> &ImageFrame {
        &self.diff
    }

    pub fn flow(&self) -> &FlowField {
        &self.flow
    }

    pub fn depth(&self) -> &ImageFrame {
        &self.depth
    }

    pub fn density(&self) -> &ImageFrame {
        &self.density
    }

    pub fn dims(&self) -> (usize, usize) {
        self.rgb.dims()
    }

    /// Channel count of one source.
    pub fn channels(&self, source: Source) -> usize {
        match source {
            Source::Diff | Source::Depth | Source::Density => 1,
            Source::Flow => 2,
            Source::Rgb => self.rgb.channels,
        }
    }

    /// One source as channel-major planes.
    pub fn planes(&self, source: Source) -> Vec<f32> {
        match source {
            Source::Diff => self.diff.data.clone(),
            Source::Flow => self.flow.to_planes(),
            Source::Rgb => self.rgb.data.clone(),
            Source::Depth => self.depth.data.clone(),
            Source::Density => self.density.data.clone(),
        }
    }

    /// Writes `<dir>/<source>.bin` (+ sidecars) for all five sources.
    pub fn write_dir(&self, dir: impl AsRef<Path>) -> Result<(), MapError> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| file_err(dir, e))?;
        write_map(dir.join("rgb.bin"), &self.rgb)?;
        write_map(dir.join("diff.bin"), &self.diff)?;
        write_flow(dir.join("flow.bin"), &self.flow)?;
        write_map(dir.join("depth.bin"), &self.depth)?;
        write_map(dir.join("density.bin"), &self.density)
    }

    pub fn read_dir(dir: impl AsRef<Path>) -> Result<Self, MapError> {
        let dir = dir.as_ref();
        let (w, h, c, data) = read_raw_map(dir.join("rgb.bin")).map_err(|e| e.in_source("rgb"))?;
        let rgb = ImageFrame::new(w, h, c, data).map_err(|e| e.in_source("rgb"))?;
        let load = |name: &'static str| load_map(dir.join(format!("{name}.bin")), w, h).map_err(|e| e.in_source(name));
        let diff = load("diff")?;
        let flow = load_flow(dir.join("flow.bin")).map_err(|e| e.in_source("flow"))?;
        let depth = load("depth")?;
        let density = load("density")?;
        Self::new(rgb, diff, flow, depth, density)
    }
}

/// Assembles the stack for `curr`. With no previous frame, difference and
/// flow are zero maps.
pub fn build_stack(
    curr: &ImageFrame,
    prev: Option<&ImageFrame>,
    frame_index: u32,
    depth_provider: &dyn SourceProvider,
    density_provider: &dyn SourceProvider,
    flow_cfg: &FlowConfig,
) -> Result<SourceStack, MapError> {
    let (w, h) = curr.dims();
    let (diff, flow) = match prev {
        Some(prev) => (
            frame_difference(curr, prev).map_err(|e| e.in_source("diff"))?,
            optical_flow(curr, prev, flow_cfg).map_err(|e| e.in_source("flow"))?,
        ),
        None => (ImageFrame::filled(w, h, 1, 0.0)?, FlowField::zeros(w, h)),
    };
    let depth = depth_provider
        .provide(curr, frame_index)
        .map_err(|e| e.in_source("depth"))?;
    let density = density_provider
        .provide(curr, frame_index)
        .map_err(|e| e.in_source("density"))?;
    SourceStack::new(curr.clone(), diff, flow, depth, density)
}
