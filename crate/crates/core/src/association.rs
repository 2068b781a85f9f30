//! Object depth, IoU, optimal assignment, depth-cascaded matching and the
//! per-frame tracker.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::geometry::{pose_to_transform, CameraIntrinsics, DepthRange, Pose6DoF};
use crate::imaging::DepthGrid;
use crate::motion::{compensate_box, kf_predict, kf_update, BBox, Lifecycle, Track, TrackStatus};
use crate::scalar::{lit, Real};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection<T> {
    pub bbox: BBox<T>,
    pub confidence: T,
    /// Object disparity; filled in by the tracker from the depth grid.
    pub depth: T,
}

impl<T: Real> Detection<T> {
    pub fn new(bbox: BBox<T>, confidence: T) -> Result<Self> {
        if !(confidence >= T::zero() && confidence <= T::one()) {
            return Err(invalid(format!("confidence {confidence} outside [0, 1]")));
        }
        Ok(Self {
            bbox,
            confidence,
            depth: T::zero(),
        })
    }
}

/// A box with its object disparity, as seen by the matcher.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate<T> {
    pub bbox: BBox<T>,
    pub depth: T,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct MatchResult {
    /// `(track index, detection index)`, sorted by track index.
    pub matches: Vec<(usize, usize)>,
    pub unmatched_tracks: Vec<usize>,
    pub unmatched_detections: Vec<usize>,
}

impl MatchResult {
    fn all_unmatched(rows: usize, cols: usize) -> Self {
        Self {
            matches: Vec::new(),
            unmatched_tracks: (0..rows).collect(),
            unmatched_detections: (0..cols).collect(),
        }
    }

    fn normalize(&mut self) {
        self.matches.sort_unstable();
        self.unmatched_tracks.sort_unstable();
        self.unmatched_detections.sort_unstable();
    }
}

/// Which pixels of a box define its depth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DepthSource {
    /// Mean along the bottom edge, which rests on the ground.
    #[default]
    Bottom,
    /// Mean over every pixel the box covers.
    Box,
}

fn pixel_index<T: Real>(v: T, len: usize) -> usize {
    let r = v.round().max(T::zero()).min(T::from_usize_lossy(len - 1));
    r.to_usize().unwrap_or(0)
}

fn clip_box<T: Real>(b: &BBox<T>, d: &DepthGrid<T>) -> Result<(usize, usize, usize, usize)> {
    let half = lit::<T>(0.5);
    let w = T::from_usize_lossy(d.width());
    let h = T::from_usize_lossy(d.height());
    if b.x1 < -half || b.y1 < -half || b.x0 > w - half || b.y0 > h - half {
        return Err(invalid(format!("box {b:?} lies entirely outside the {}x{} grid", d.width(), d.height())));
    }
    Ok((
        pixel_index(b.x0, d.width()),
        pixel_index(b.y0, d.height()),
        pixel_index(b.x1, d.width()),
        pixel_index(b.y1, d.height()),
    ))
}

/// Mean disparity along the bottom edge of the box: row `y1`, columns
/// `x0..=x1`, after clipping to the grid.
pub fn box_depth<T: Real>(b: &BBox<T>, d: &DepthGrid<T>) -> Result<T> {
    let (x0, _, x1, y1) = clip_box(b, d)?;
    let sum: T = (x0..=x1).map(|x| d.get(x, y1)).sum();
    Ok(sum / T::from_usize_lossy(x1 - x0 + 1))
}

/// Mean disparity over every pixel the clipped box covers.
pub fn box_depth_full<T: Real>(b: &BBox<T>, d: &DepthGrid<T>) -> Result<T> {
    let (x0, y0, x1, y1) = clip_box(b, d)?;
    let sum: T = (y0..=y1).flat_map(|y| (x0..=x1).map(move |x| (x, y))).map(|(x, y)| d.get(x, y)).sum();
    Ok(sum / T::from_usize_lossy((x1 - x0 + 1) * (y1 - y0 + 1)))
}

pub fn object_depth<T: Real>(b: &BBox<T>, d: &DepthGrid<T>, source: DepthSource) -> Result<T> {
    match source {
        DepthSource::Bottom => box_depth(b, d),
        DepthSource::Box => box_depth_full(b, d),
    }
}

pub fn iou<T: Real>(a: &BBox<T>, b: &BBox<T>) -> T {
    let iw = (a.x1.min(b.x1) - a.x0.max(b.x0)).max(T::zero());
    let ih = (a.y1.min(b.y1) - a.y0.max(b.y0)).max(T::zero());
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union > T::zero() {
        (inter / union).min(T::one())
    } else {
        T::zero()
    }
}

/// Minimum-cost one-to-one assignment, rows ≤ columns, via shortest
/// augmenting paths with potentials. Returns the column of every row.
fn hungarian_rows<T: Real>(cost: &[Vec<T>], cols: usize) -> Vec<usize> {
    let rows = cost.len();
    let inf = T::infinity();
    // 1-based arrays; index 0 is the virtual start column.
    let mut u = vec![T::zero(); rows + 1];
    let mut v = vec![T::zero(); cols + 1];
    let mut owner = vec![0usize; cols + 1];
    let mut way = vec![0usize; cols + 1];
    for i in 1..=rows {
        owner[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![inf; cols + 1];
        let mut used = vec![false; cols + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=cols {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=cols {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![usize::MAX; rows];
    for j in 1..=cols {
        if owner[j] != 0 {
            assignment[owner[j] - 1] = j - 1;
        }
    }
    assignment
}

/// Minimum-total-cost assignment over a dense `rows × cols` matrix
/// (`cost[r][c]`), followed by gating: pairs costing more than `gate`, or
/// infinite, are reported unmatched.
pub fn linear_assignment<T: Real>(cost: &[Vec<T>], gate: T) -> Result<MatchResult> {
    linear_assignment_sized(cost, cost.first().map_or(0, Vec::len), gate)
}

/// [`linear_assignment`] with an explicit column count, so that a matrix with
/// no rows still reports its columns as unmatched.
pub fn linear_assignment_sized<T: Real>(cost: &[Vec<T>], cols: usize, gate: T) -> Result<MatchResult> {
    let rows = cost.len();
    if cost.iter().any(|r| r.len() != cols) {
        return Err(invalid("cost matrix rows have differing lengths"));
    }
    if cost.iter().flatten().any(|c| c.is_nan() || *c == T::neg_infinity()) {
        return Err(invalid("cost matrix entries must be finite or +inf"));
    }
    if rows == 0 || cols == 0 {
        return Ok(MatchResult::all_unmatched(rows, cols));
    }

    // Replace +inf by a finite cost larger than any finite assignment total.
    let max_finite = cost
        .iter()
        .flatten()
        .filter(|c| c.is_finite())
        .fold(T::zero(), |m, c| m.max(c.abs()));
    let big = (max_finite + T::one()) * T::from_usize_lossy(rows.max(cols) + 1);
    let finite = |c: T| if c.is_finite() { c } else { big };

    let transposed = rows > cols;
    let pairs: Vec<(usize, usize)> = if transposed {
        let t: Vec<Vec<T>> = (0..cols).map(|c| (0..rows).map(|r| finite(cost[r][c])).collect()).collect();
        hungarian_rows(&t, rows)
            .into_iter()
            .enumerate()
            .map(|(c, r)| (r, c))
            .collect()
    } else {
        let m: Vec<Vec<T>> = cost.iter().map(|row| row.iter().map(|c| finite(*c)).collect()).collect();
        hungarian_rows(&m, cols).into_iter().enumerate().collect()
    };

    let mut out = MatchResult::default();
    let mut row_used = vec![false; rows];
    let mut col_used = vec![false; cols];
    for (r, c) in pairs {
        let v = cost[r][c];
        if v.is_finite() && v <= gate {
            out.matches.push((r, c));
            row_used[r] = true;
            col_used[c] = true;
        }
    }
    out.unmatched_tracks = (0..rows).filter(|r| !row_used[*r]).collect();
    out.unmatched_detections = (0..cols).filter(|c| !col_used[*c]).collect();
    out.normalize();
    Ok(out)
}

/// `1 − IoU` for every track/detection pair.
pub fn iou_cost<T: Real>(tracks: &[BBox<T>], dets: &[BBox<T>]) -> Vec<Vec<T>> {
    tracks
        .iter()
        .map(|t| dets.iter().map(|d| T::one() - iou(t, d)).collect())
        .collect()
}

/// Depth level of `d` within `[lo, hi]` split into `n` bins, 0 = nearest.
fn depth_level<T: Real>(d: T, lo: T, hi: T, n: usize) -> usize {
    if !(hi > lo) {
        return 0;
    }
    let pos = ((hi - d) / (hi - lo) * T::from_usize_lossy(n)).floor();
    pos.to_usize().unwrap_or(0).min(n - 1)
}

/// Association in rounds over evenly spaced disparity intervals.
///
/// The pooled disparity range of tracks and detections is split into
/// `n_levels` bins. Bins are visited from the nearest (largest disparity) to
/// the farthest; at each bin the members plus everything left unmatched by
/// earlier bins are assigned on `1 − IoU` with gate `1 − iou_gate`.
pub fn depth_cascade_match<T: Real>(
    tracks: &[Candidate<T>],
    dets: &[Candidate<T>],
    n_levels: usize,
    iou_gate: T,
) -> Result<MatchResult> {
    if n_levels < 1 {
        return Err(invalid("n_levels must be at least 1"));
    }
    let all = tracks.iter().chain(dets).map(|c| c.depth);
    let (lo, hi) = all.fold((T::infinity(), T::neg_infinity()), |(lo, hi), d| (lo.min(d), hi.max(d)));
    let track_level: Vec<usize> = tracks.iter().map(|c| depth_level(c.depth, lo, hi, n_levels)).collect();
    let det_level: Vec<usize> = dets.iter().map(|c| depth_level(c.depth, lo, hi, n_levels)).collect();

    let gate = T::one() - iou_gate;
    let mut result = MatchResult::default();
    let mut carry_t: Vec<usize> = Vec::new();
    let mut carry_d: Vec<usize> = Vec::new();
    for level in 0..n_levels {
        let mut pool_t = std::mem::take(&mut carry_t);
        pool_t.extend((0..tracks.len()).filter(|i| track_level[*i] == level));
        pool_t.sort_unstable();
        let mut pool_d = std::mem::take(&mut carry_d);
        pool_d.extend((0..dets.len()).filter(|i| det_level[*i] == level));
        pool_d.sort_unstable();

        if pool_t.is_empty() || pool_d.is_empty() {
            carry_t = pool_t;
            carry_d = pool_d;
            continue;
        }
        let cost: Vec<Vec<T>> = pool_t
            .iter()
            .map(|&ti| pool_d.iter().map(|&di| T::one() - iou(&tracks[ti].bbox, &dets[di].bbox)).collect())
            .collect();
        let m = linear_assignment(&cost, gate)?;
        result.matches.extend(m.matches.iter().map(|&(r, c)| (pool_t[r], pool_d[c])));
        carry_t = m.unmatched_tracks.iter().map(|&r| pool_t[r]).collect();
        carry_d = m.unmatched_detections.iter().map(|&c| pool_d[c]).collect();
    }
    result.unmatched_tracks = carry_t;
    result.unmatched_detections = carry_d;
    result.normalize();
    Ok(result)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackerConfig<T> {
    pub high_thresh: T,
    pub low_thresh: T,
    pub new_track_thresh: T,
    /// Minimum IoU for a track/detection pair to be associated.
    pub iou_gate: T,
    pub n_levels: usize,
    pub lifecycle: Lifecycle,
    /// Second association stage for low-confidence detections.
    pub byte_split: bool,
    /// Correct predicted boxes for camera motion.
    pub compensation: bool,
    /// When off, association runs as a single level.
    pub depth_cascade: bool,
    pub depth_source: DepthSource,
    pub range: DepthRange<T>,
}

impl<T: Real> Default for TrackerConfig<T> {
    fn default() -> Self {
        Self {
            high_thresh: lit(0.5),
            low_thresh: lit(0.1),
            new_track_thresh: lit(0.6),
            iou_gate: lit(0.3),
            n_levels: 8,
            lifecycle: Lifecycle::default(),
            byte_split: false,
            compensation: true,
            depth_cascade: true,
            depth_source: DepthSource::Bottom,
            range: DepthRange::default(),
        }
    }
}

impl<T: Real> TrackerConfig<T> {
    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: T| {
            if v >= T::zero() && v <= T::one() {
                Ok(())
            } else {
                Err(invalid(format!("{name} must lie in [0, 1], got {v}")))
            }
        };
        unit("high_thresh", self.high_thresh)?;
        unit("low_thresh", self.low_thresh)?;
        unit("new_track_thresh", self.new_track_thresh)?;
        unit("iou_gate", self.iou_gate)?;
        if self.low_thresh > self.high_thresh {
            return Err(invalid("low_thresh must not exceed high_thresh"));
        }
        if self.n_levels < 1 {
            return Err(invalid("n_levels must be at least 1"));
        }
        if self.lifecycle.min_hits < 1 || self.lifecycle.max_age < 1 {
            return Err(invalid("min_hits and max_age must be at least 1"));
        }
        self.range.validate()
    }

    pub fn effective_levels(&self) -> usize {
        if self.depth_cascade {
            self.n_levels
        } else {
            1
        }
    }
}

/// Tracker output for one frame.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FrameOutput<T> {
    /// Confirmed tracks updated this frame, by id.
    pub confirmed: Vec<(u64, BBox<T>)>,
    /// Every live track's predicted (and compensated) box before association.
    pub predicted: Vec<(u64, BBox<T>)>,
}

#[derive(Debug, Clone)]
pub struct Tracker<T> {
    cfg: TrackerConfig<T>,
    tracks: Vec<Track<T>>,
    next_id: u64,
    frame: u64,
}

impl<T: Real> Tracker<T> {
    pub fn new(cfg: TrackerConfig<T>) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            tracks: Vec::new(),
            next_id: 1,
            frame: 0,
        })
    }

    pub fn config(&self) -> &TrackerConfig<T> {
        &self.cfg
    }

    pub fn tracks(&self) -> &[Track<T>] {
        &self.tracks
    }

    pub fn frame_count(&self) -> u64 {
        self.frame
    }

    /// Ids handed out so far.
    pub fn issued_ids(&self) -> u64 {
        self.next_id - 1
    }

    /// Advances the tracker by one frame.
    ///
    /// `pose` is the camera motion from the previous frame to this one; it is
    /// ignored when compensation is disabled.
    pub fn step(
        &mut self,
        detections: &[Detection<T>],
        depth: &DepthGrid<T>,
        pose: Option<&Pose6DoF<T>>,
        k: &CameraIntrinsics<T>,
    ) -> Result<FrameOutput<T>> {
        self.frame += 1;
        let cfg = self.cfg;

        for t in &mut self.tracks {
            if t.status() != TrackStatus::Active {
                // Unobserved height drift would otherwise run away while lost.
                t.state.mean[7] = T::zero();
            }
            t.state = kf_predict(&t.state);
        }

        if let (true, Some(pose)) = (cfg.compensation, pose) {
            let rigid = pose_to_transform(pose)?;
            for t in &mut self.tracks {
                let metric = cfg.range.to_depth(t.depth);
                let moved = compensate_box(&t.state.bbox(), metric, k, &rigid)?;
                t.state.set_box(&moved);
            }
        }

        let mut dets = detections.to_vec();
        for d in &mut dets {
            d.depth = object_depth(&d.bbox, depth, cfg.depth_source)?;
        }
        let track_cands: Vec<Candidate<T>> = self
            .tracks
            .iter()
            .map(|t| {
                let bbox = t.state.bbox();
                // A track predicted off-frame keeps its last depth.
                let depth = object_depth(&bbox, depth, cfg.depth_source).unwrap_or(t.depth);
                Candidate { bbox, depth }
            })
            .collect();
        let predicted = self.tracks.iter().zip(&track_cands).map(|(t, c)| (t.id, c.bbox)).collect();

        let (high, low): (Vec<usize>, Vec<usize>) = if cfg.byte_split {
            let high = (0..dets.len()).filter(|&i| dets[i].confidence >= cfg.high_thresh).collect();
            let low = (0..dets.len())
                .filter(|&i| dets[i].confidence >= cfg.low_thresh && dets[i].confidence < cfg.high_thresh)
                .collect();
            (high, low)
        } else {
            ((0..dets.len()).filter(|&i| dets[i].confidence >= cfg.low_thresh).collect(), Vec::new())
        };

        let high_cands: Vec<Candidate<T>> = high.iter().map(|&i| Candidate { bbox: dets[i].bbox, depth: dets[i].depth }).collect();
        let first = depth_cascade_match(&track_cands, &high_cands, cfg.effective_levels(), cfg.iou_gate)?;

        let mut updated = vec![false; self.tracks.len()];
        for &(ti, hi) in &first.matches {
            let det = &dets[high[hi]];
            self.apply_match(ti, det)?;
            updated[ti] = true;
        }

        let mut remaining_tracks = first.unmatched_tracks.clone();
        if cfg.byte_split && !low.is_empty() {
            let pool: Vec<usize> = remaining_tracks.iter().copied().filter(|&ti| self.tracks[ti].is_confirmed()).collect();
            let boxes: Vec<BBox<T>> = pool.iter().map(|&ti| track_cands[ti].bbox).collect();
            let low_boxes: Vec<BBox<T>> = low.iter().map(|&i| dets[i].bbox).collect();
            let second = linear_assignment(&iou_cost(&boxes, &low_boxes), T::one() - cfg.iou_gate)?;
            for &(r, c) in &second.matches {
                let ti = pool[r];
                let det = dets[low[c]];
                self.apply_match(ti, &det)?;
                updated[ti] = true;
            }
            remaining_tracks.retain(|ti| !updated[*ti]);
        }

        for &ti in &remaining_tracks {
            let t = &mut self.tracks[ti];
            t.depth = track_cands[ti].depth;
            t.mark_miss(&cfg.lifecycle);
        }

        let mut confirmed: Vec<(u64, BBox<T>)> = self
            .tracks
            .iter()
            .zip(&updated)
            .filter(|(t, up)| **up && t.status() == TrackStatus::Active)
            .map(|(t, _)| (t.id, t.state.bbox()))
            .collect();

        for &hi in &first.unmatched_detections {
            let det = &dets[high[hi]];
            if det.confidence >= cfg.new_track_thresh {
                let track = Track::new(self.next_id, &det.bbox, det.depth, &cfg.lifecycle)?;
                self.next_id += 1;
                if track.status() == TrackStatus::Active {
                    confirmed.push((track.id, track.state.bbox()));
                }
                self.tracks.push(track);
            }
        }

        self.tracks.retain(|t| t.status() != TrackStatus::Removed);
        Ok(FrameOutput { confirmed, predicted })
    }

    fn apply_match(&mut self, ti: usize, det: &Detection<T>) -> Result<()> {
        let life = self.cfg.lifecycle;
        let t = &mut self.tracks[ti];
        t.state = kf_update(&t.state, &det.bbox)?;
        t.depth = det.depth;
        t.mark_hit(&life);
        Ok(())
    }
}
