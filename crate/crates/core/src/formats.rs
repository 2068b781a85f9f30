//! Readers and writers: MOT-style text, the `DPTH` disparity container,
//! binary PGM/PPM, pose lists and the `key = value` run configuration.
//!
//! Every reader has a byte- or string-level twin (`decode_*`, `parse_*`)
//! that takes a label used in error messages in place of a path.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::association::{DepthSource, Detection, TrackerConfig};
use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, DepthRange, Pose6DoF};
use crate::imaging::{luma, DepthGrid, ImageGrid};
use crate::metrics::TrajectorySet;
use crate::motion::BBox;
use crate::pose_align::AlignConfig;
use crate::scalar::Real;

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

// ---------------------------------------------------------------- MOT text

/// One `frame,id,x,y,w,h,conf[,...]` line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotRecord {
    pub frame: u64,
    /// `-1` for raw detections.
    pub id: i64,
    pub bbox: BBox<f64>,
    pub confidence: f64,
}

pub fn parse_mot(text: &str, label: &str) -> Result<Vec<MotRecord>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let err = |message: String| Error::ParseLine {
            path: label.to_string(),
            line: i + 1,
            message,
        };
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() < 7 {
            return Err(err(format!("expected at least 7 comma-separated fields, found {}", fields.len())));
        }
        let frame: u64 = fields[0].parse().map_err(|_| err(format!("bad frame number {:?}", fields[0])))?;
        if frame < 1 {
            return Err(err("frame numbers start at 1".into()));
        }
        let id: i64 = fields[1].parse().map_err(|_| err(format!("bad id {:?}", fields[1])))?;
        if id < -1 {
            return Err(err(format!("id {id} is below -1")));
        }
        let mut nums = [0.0f64; 5];
        for (k, v) in nums.iter_mut().enumerate() {
            let f = fields[2 + k];
            *v = f
                .parse()
                .ok()
                .filter(|x: &f64| x.is_finite())
                .ok_or_else(|| err(format!("field {} is not a finite number: {f:?}", 3 + k)))?;
        }
        let [x, y, w, h, confidence] = nums;
        if !(w > 0.0 && h > 0.0) {
            return Err(err(format!("box size must be positive, got {w}x{h}")));
        }
        let bbox = BBox::from_tlwh(x, y, w, h).map_err(|e| err(e.to_string()))?;
        out.push(MotRecord {
            frame,
            id,
            bbox,
            confidence,
        });
    }
    Ok(out)
}

/// Detections grouped by frame. Track ids in the file are ignored.
pub fn parse_detections(text: &str, label: &str) -> Result<BTreeMap<u64, Vec<Detection<f64>>>> {
    let mut out: BTreeMap<u64, Vec<Detection<f64>>> = BTreeMap::new();
    let records = parse_mot(text, label)?;
    let lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()).map(|(i, _)| i + 1);
    for (r, line) in records.into_iter().zip(lines) {
        let det = Detection::new(r.bbox, r.confidence).map_err(|e| Error::ParseLine {
            path: label.to_string(),
            line,
            message: e.to_string(),
        })?;
        out.entry(r.frame).or_default().push(det);
    }
    Ok(out)
}

pub fn read_detections(path: &Path) -> Result<BTreeMap<u64, Vec<Detection<f64>>>> {
    parse_detections(&read_text(path)?, &path.display().to_string())
}

pub fn parse_trajectories(text: &str, label: &str) -> Result<TrajectorySet<f64>> {
    let mut set = TrajectorySet::new();
    let lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()).map(|(i, _)| i + 1);
    for (r, line) in parse_mot(text, label)?.into_iter().zip(lines) {
        let err = |message: String| Error::ParseLine {
            path: label.to_string(),
            line,
            message,
        };
        if r.id < 0 {
            return Err(err("trajectory ids must be non-negative".into()));
        }
        set.insert(r.frame, r.id as u64, r.bbox).map_err(|e| err(e.to_string()))?;
    }
    Ok(set)
}

pub fn read_trajectories(path: &Path) -> Result<TrajectorySet<f64>> {
    parse_trajectories(&read_text(path)?, &path.display().to_string())
}

/// MOT lines with six decimals; confidence is written as 1.
pub fn format_trajectories(set: &TrajectorySet<f64>) -> String {
    let mut s = String::new();
    for (frame, id, b) in set.iter() {
        let _ = writeln!(
            s,
            "{frame},{id},{:.6},{:.6},{:.6},{:.6},1.000000,-1,-1,-1",
            b.x0,
            b.y0,
            b.width(),
            b.height()
        );
    }
    s
}

pub fn write_trajectories(set: &TrajectorySet<f64>, path: &Path) -> Result<()> {
    write_bytes(path, format_trajectories(set).as_bytes())
}

/// Detections as MOT lines with id `-1`.
pub fn format_detections(frames: &BTreeMap<u64, Vec<Detection<f64>>>) -> String {
    let mut s = String::new();
    for (frame, dets) in frames {
        for d in dets {
            let b = d.bbox;
            let _ = writeln!(
                s,
                "{frame},-1,{:.6},{:.6},{:.6},{:.6},{:.6},-1,-1,-1",
                b.x0,
                b.y0,
                b.width(),
                b.height(),
                d.confidence
            );
        }
    }
    s
}

// ------------------------------------------------------------- depth grids

pub const DEPTH_MAGIC: &[u8; 4] = b"DPTH";
const DEPTH_HEADER: usize = 12;

pub fn encode_depth_grid<T: Real>(grid: &DepthGrid<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(DEPTH_HEADER + 4 * grid.data().len());
    out.extend_from_slice(DEPTH_MAGIC);
    out.extend_from_slice(&(grid.width() as u32).to_le_bytes());
    out.extend_from_slice(&(grid.height() as u32).to_le_bytes());
    for v in grid.data() {
        out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
    }
    out
}

pub fn decode_depth_grid<T: Real>(bytes: &[u8], label: &str) -> Result<DepthGrid<T>> {
    let err = |offset: usize, message: String| Error::ParseBinary {
        path: label.to_string(),
        offset,
        message,
    };
    if bytes.len() < 4 || &bytes[..4] != DEPTH_MAGIC {
        return Err(err(0, "missing DPTH magic".into()));
    }
    if bytes.len() < DEPTH_HEADER {
        return Err(err(bytes.len(), "header truncated".into()));
    }
    let u32_at = |o: usize| u32::from_le_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]) as usize;
    let (w, h) = (u32_at(4), u32_at(8));
    if w == 0 || h == 0 {
        return Err(err(4, format!("empty grid {w}x{h}")));
    }
    let expected = w
        .checked_mul(h)
        .and_then(|n| n.checked_mul(4))
        .and_then(|n| n.checked_add(DEPTH_HEADER))
        .ok_or_else(|| err(4, format!("grid size {w}x{h} overflows")))?;
    if bytes.len() < expected {
        return Err(err(bytes.len(), format!("payload truncated: {w}x{h} needs {expected} bytes")));
    }
    if bytes.len() > expected {
        return Err(err(expected, "trailing bytes after payload".into()));
    }
    let mut data = Vec::with_capacity(w * h);
    for (i, chunk) in bytes[DEPTH_HEADER..].chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
        if !(0.0..=1.0).contains(&v) {
            return Err(err(DEPTH_HEADER + 4 * i, format!("value {v} outside [0, 1]")));
        }
        data.push(T::lit(v as f64));
    }
    DepthGrid::new(w, h, data).map_err(|e| err(DEPTH_HEADER, e.to_string()))
}

pub fn read_depth_grid<T: Real>(path: &Path) -> Result<DepthGrid<T>> {
    decode_depth_grid(&read_bytes(path)?, &path.display().to_string())
}

/// Values are stored as `f32`; `f64` grids lose precision.
pub fn write_depth_grid<T: Real>(grid: &DepthGrid<T>, path: &Path) -> Result<()> {
    write_bytes(path, &encode_depth_grid(grid))
}

// ------------------------------------------------------------------ images

struct HeaderCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl HeaderCursor<'_> {
    fn skip_space(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                c if c.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn number(&mut self) -> Option<usize> {
        self.skip_space();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() && self.pos - start < 9 {
            self.pos += 1;
        }
        if self.pos == start {
            return None;
        }
        std::str::from_utf8(&self.bytes[start..self.pos]).ok()?.parse().ok()
    }
}

/// Binary PGM (`P5`) or PPM (`P6`, reduced to luma), maxval 255.
pub fn decode_image<T: Real>(bytes: &[u8], label: &str) -> Result<ImageGrid<T>> {
    let err = |offset: usize, message: String| Error::ParseBinary {
        path: label.to_string(),
        offset,
        message,
    };
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => return Err(err(0, "unsupported image format; expected binary P5 or P6".into())),
    };
    let mut cur = HeaderCursor { bytes, pos: 2 };
    let w = cur.number().ok_or_else(|| err(cur.pos, "bad width".into()))?;
    let h = cur.number().ok_or_else(|| err(cur.pos, "bad height".into()))?;
    let maxval = cur.number().ok_or_else(|| err(cur.pos, "bad maxval".into()))?;
    if w == 0 || h == 0 {
        return Err(err(2, format!("empty image {w}x{h}")));
    }
    if maxval != 255 {
        return Err(err(cur.pos, format!("unsupported maxval {maxval}")));
    }
    match bytes.get(cur.pos) {
        Some(c) if c.is_ascii_whitespace() => cur.pos += 1,
        _ => return Err(err(cur.pos, "expected one whitespace byte before pixel data".into())),
    }
    let need = w
        .checked_mul(h)
        .and_then(|n| n.checked_mul(channels))
        .ok_or_else(|| err(2, format!("image size {w}x{h} overflows")))?;
    let payload = &bytes[cur.pos..];
    if payload.len() < need {
        return Err(err(bytes.len(), format!("pixel data truncated: need {need} bytes, found {}", payload.len())));
    }
    let scale = T::one() / T::lit(255.0);
    let px = |b: u8| T::lit(b as f64) * scale;
    let data: Vec<T> = if channels == 1 {
        payload[..need].iter().map(|b| px(*b)).collect()
    } else {
        payload[..need].chunks_exact(3).map(|c| luma(px(c[0]), px(c[1]), px(c[2]))).collect()
    };
    ImageGrid::new(w, h, data).map_err(|e| err(cur.pos, e.to_string()))
}

pub fn read_image<T: Real>(path: &Path) -> Result<ImageGrid<T>> {
    decode_image(&read_bytes(path)?, &path.display().to_string())
}

pub fn encode_pgm<T: Real>(img: &ImageGrid<T>) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend(img.data().iter().map(|v| (v.as_f64() * 255.0).round().clamp(0.0, 255.0) as u8));
    out
}

pub fn write_pgm<T: Real>(img: &ImageGrid<T>, path: &Path) -> Result<()> {
    write_bytes(path, &encode_pgm(img))
}

// ------------------------------------------------------------------- poses

/// Six whitespace-separated numbers per line: `θx θy θz tx ty tz`.
pub fn parse_poses(text: &str, label: &str) -> Result<Vec<Pose6DoF<f64>>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |message: String| Error::ParseLine {
            path: label.to_string(),
            line: i + 1,
            message,
        };
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>().ok().filter(|v| v.is_finite()))
            .collect::<Option<_>>()
            .ok_or_else(|| err("pose values must be finite numbers".into()))?;
        let arr: [f64; 6] = vals.try_into().map_err(|v: Vec<f64>| err(format!("expected 6 values, found {}", v.len())))?;
        out.push(Pose6DoF::from_array(arr));
    }
    Ok(out)
}

pub fn read_poses(path: &Path) -> Result<Vec<Pose6DoF<f64>>> {
    parse_poses(&read_text(path)?, &path.display().to_string())
}

/// Shortest round-trip formatting, so reading back is exact.
pub fn format_poses(poses: &[Pose6DoF<f64>]) -> String {
    let mut s = String::new();
    for p in poses {
        let a = p.to_array();
        let _ = writeln!(s, "{} {} {} {} {} {}", a[0], a[1], a[2], a[3], a[4], a[5]);
    }
    s
}

pub fn write_poses(poses: &[Pose6DoF<f64>], path: &Path) -> Result<()> {
    write_bytes(path, format_poses(poses).as_bytes())
}

// ------------------------------------------------------------------ config

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunConfig {
    pub camera: CameraIntrinsics<f64>,
    pub tracker: TrackerConfig<f64>,
    pub align: AlignConfig<f64>,
    pub range: DepthRange<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            camera: CameraIntrinsics {
                fx: 200.0,
                fy: 200.0,
                cx: 127.5,
                cy: 79.5,
            },
            tracker: TrackerConfig::default(),
            align: AlignConfig::default(),
            range: DepthRange::default(),
        }
    }
}

pub const CONFIG_KEYS: [&str; 24] = [
    "camera.fx",
    "camera.fy",
    "camera.cx",
    "camera.cy",
    "tracker.high_thresh",
    "tracker.low_thresh",
    "tracker.new_track_thresh",
    "tracker.iou_gate",
    "tracker.n_levels",
    "tracker.max_age",
    "tracker.min_hits",
    "tracker.byte_split",
    "tracker.compensation",
    "tracker.depth_cascade",
    "tracker.depth_source",
    "align.pyramid_levels",
    "align.max_evals",
    "align.tolerance",
    "align.alpha",
    "depth.d_min",
    "depth.d_max",
    "metrics.iou_gate",
    "scene.width",
    "scene.height",
];

fn parse_real(v: &str) -> std::result::Result<f64, String> {
    v.parse::<f64>()
        .ok()
        .filter(|x| x.is_finite())
        .ok_or_else(|| format!("expected a finite number, got {v:?}"))
}

fn parse_count(v: &str, min: u64) -> std::result::Result<u64, String> {
    let n: u64 = v.parse().map_err(|_| format!("expected a whole number, got {v:?}"))?;
    if n < min {
        return Err(format!("must be at least {min}, got {n}"));
    }
    Ok(n)
}

fn parse_switch(v: &str) -> std::result::Result<bool, String> {
    match v {
        "on" | "true" => Ok(true),
        "off" | "false" => Ok(false),
        _ => Err(format!("expected on/off, got {v:?}")),
    }
}

fn unit(v: &str) -> std::result::Result<f64, String> {
    let x = parse_real(v)?;
    if (0.0..=1.0).contains(&x) {
        Ok(x)
    } else {
        Err(format!("must lie in [0, 1], got {x}"))
    }
}

fn positive(v: &str) -> std::result::Result<f64, String> {
    let x = parse_real(v)?;
    if x > 0.0 {
        Ok(x)
    } else {
        Err(format!("must be positive, got {x}"))
    }
}

/// Extra settings that ride along in the config file.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConfigExtras {
    pub metrics_iou_gate: f64,
    /// Image size of the dataset, when known.
    pub scene_size: Option<(usize, usize)>,
}

impl Default for ConfigExtras {
    fn default() -> Self {
        Self {
            metrics_iou_gate: 0.5,
            scene_size: None,
        }
    }
}

fn apply_key(cfg: &mut RunConfig, extras: &mut ConfigExtras, key: &str, v: &str) -> std::result::Result<(), String> {
    let t = &mut cfg.tracker;
    match key {
        "camera.fx" => cfg.camera.fx = positive(v)?,
        "camera.fy" => cfg.camera.fy = positive(v)?,
        "camera.cx" => cfg.camera.cx = parse_real(v)?,
        "camera.cy" => cfg.camera.cy = parse_real(v)?,
        "tracker.high_thresh" => t.high_thresh = unit(v)?,
        "tracker.low_thresh" => t.low_thresh = unit(v)?,
        "tracker.new_track_thresh" => t.new_track_thresh = unit(v)?,
        "tracker.iou_gate" => t.iou_gate = unit(v)?,
        "tracker.n_levels" => t.n_levels = parse_count(v, 1)? as usize,
        "tracker.max_age" => t.lifecycle.max_age = u32::try_from(parse_count(v, 1)?).map_err(|e| e.to_string())?,
        "tracker.min_hits" => t.lifecycle.min_hits = u32::try_from(parse_count(v, 1)?).map_err(|e| e.to_string())?,
        "tracker.byte_split" => t.byte_split = parse_switch(v)?,
        "tracker.compensation" => t.compensation = parse_switch(v)?,
        "tracker.depth_cascade" => t.depth_cascade = parse_switch(v)?,
        "tracker.depth_source" => {
            t.depth_source = match v {
                "bottom" => DepthSource::Bottom,
                "box" => DepthSource::Box,
                _ => return Err(format!("expected bottom or box, got {v:?}")),
            }
        }
        "align.pyramid_levels" => cfg.align.pyramid_levels = parse_count(v, 1)? as usize,
        "align.max_evals" => cfg.align.max_evals_per_level = parse_count(v, 10)? as usize,
        "align.tolerance" => cfg.align.converge_tol = positive(v)?,
        "align.alpha" => cfg.align.alpha = unit(v)?,
        "depth.d_min" => cfg.range.d_min = positive(v)?,
        "depth.d_max" => cfg.range.d_max = positive(v)?,
        "metrics.iou_gate" => {
            let g = unit(v)?;
            if g == 0.0 || g == 1.0 {
                return Err("must lie strictly between 0 and 1".into());
            }
            extras.metrics_iou_gate = g;
        }
        "scene.width" => extras.scene_size = Some((parse_count(v, 1)? as usize, extras.scene_size.map_or(0, |s| s.1))),
        "scene.height" => extras.scene_size = Some((extras.scene_size.map_or(0, |s| s.0), parse_count(v, 1)? as usize)),
        _ => return Err("unknown key".into()),
    }
    Ok(())
}

/// Parses `key = value` lines; `#` starts a comment. Absent keys keep their
/// defaults, unknown or repeated keys are rejected.
pub fn parse_config(text: &str) -> Result<(RunConfig, ConfigExtras)> {
    let mut cfg = RunConfig::default();
    let mut extras = ConfigExtras::default();
    let mut seen = std::collections::BTreeSet::new();
    for raw in text.lines() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| Error::Config {
            key: line.to_string(),
            message: "expected `key = value`".into(),
        })?;
        let (key, value) = (key.trim(), value.trim());
        let cfg_err = |message: String| Error::Config {
            key: key.to_string(),
            message,
        };
        if !seen.insert(key.to_string()) {
            return Err(cfg_err("set more than once".into()));
        }
        apply_key(&mut cfg, &mut extras, key, value).map_err(cfg_err)?;
    }

    let cfg_err = |key: &str, e: Error| Error::Config {
        key: key.to_string(),
        message: e.to_string(),
    };
    if let Some((w, h)) = extras.scene_size {
        if w == 0 || h == 0 {
            return Err(cfg_err("scene.width", crate::error::invalid("scene.width and scene.height go together")));
        }
    }
    cfg.range.validate().map_err(|e| cfg_err("depth.d_min", e))?;
    cfg.tracker.range = cfg.range;
    cfg.align.range = cfg.range;
    if cfg.tracker.low_thresh > cfg.tracker.high_thresh {
        return Err(cfg_err(
            "tracker.low_thresh",
            crate::error::invalid("must not exceed tracker.high_thresh"),
        ));
    }
    cfg.tracker.validate().map_err(|e| cfg_err("tracker", e))?;
    cfg.align.validate().map_err(|e| cfg_err("align", e))?;
    Ok((cfg, extras))
}

pub fn read_config(path: &Path) -> Result<RunConfig> {
    Ok(read_config_with_extras(path)?.0)
}

pub fn read_config_with_extras(path: &Path) -> Result<(RunConfig, ConfigExtras)> {
    parse_config(&read_text(path)?)
}

fn switch(b: bool) -> &'static str {
    if b {
        "on"
    } else {
        "off"
    }
}

/// Every key with its value; parsing the result reproduces `cfg` exactly.
pub fn format_config(cfg: &RunConfig, extras: &ConfigExtras) -> String {
    let t = &cfg.tracker;
    let mut s = String::new();
    let mut kv = |k: &str, v: String| {
        let _ = writeln!(s, "{k} = {v}");
    };
    kv("camera.fx", cfg.camera.fx.to_string());
    kv("camera.fy", cfg.camera.fy.to_string());
    kv("camera.cx", cfg.camera.cx.to_string());
    kv("camera.cy", cfg.camera.cy.to_string());
    kv("tracker.high_thresh", t.high_thresh.to_string());
    kv("tracker.low_thresh", t.low_thresh.to_string());
    kv("tracker.new_track_thresh", t.new_track_thresh.to_string());
    kv("tracker.iou_gate", t.iou_gate.to_string());
    kv("tracker.n_levels", t.n_levels.to_string());
    kv("tracker.max_age", t.lifecycle.max_age.to_string());
    kv("tracker.min_hits", t.lifecycle.min_hits.to_string());
    kv("tracker.byte_split", switch(t.byte_split).into());
    kv("tracker.compensation", switch(t.compensation).into());
    kv("tracker.depth_cascade", switch(t.depth_cascade).into());
    kv(
        "tracker.depth_source",
        match t.depth_source {
            DepthSource::Bottom => "bottom".into(),
            DepthSource::Box => "box".into(),
        },
    );
    kv("align.pyramid_levels", cfg.align.pyramid_levels.to_string());
    kv("align.max_evals", cfg.align.max_evals_per_level.to_string());
    kv("align.tolerance", cfg.align.converge_tol.to_string());
    kv("align.alpha", cfg.align.alpha.to_string());
    kv("depth.d_min", cfg.range.d_min.to_string());
    kv("depth.d_max", cfg.range.d_max.to_string());
    kv("metrics.iou_gate", extras.metrics_iou_gate.to_string());
    if let Some((w, h)) = extras.scene_size {
        kv("scene.width", w.to_string());
        kv("scene.height", h.to_string());
    }
    s
}
