//! CLEAR-MOT counts and IDF1.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use crate::association::{iou, linear_assignment};
use crate::error::{invalid, Result};
use crate::motion::BBox;
use crate::scalar::Real;

pub const DEFAULT_IOU_GATE: f64 = 0.5;

/// Boxes keyed by `(frame, id)`; frames start at 1.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrajectorySet<T> {
    entries: BTreeMap<(u64, u64), BBox<T>>,
}

impl<T: Real> TrajectorySet<T> {
    pub fn new() -> Self {
        Self { entries: BTreeMap::new() }
    }

    pub fn from_entries(entries: impl IntoIterator<Item = (u64, u64, BBox<T>)>) -> Result<Self> {
        let mut set = Self::new();
        for (frame, id, b) in entries {
            set.insert(frame, id, b)?;
        }
        Ok(set)
    }

    pub fn insert(&mut self, frame: u64, id: u64, b: BBox<T>) -> Result<()> {
        if frame < 1 {
            return Err(invalid("frame numbers start at 1"));
        }
        if self.entries.insert((frame, id), b).is_some() {
            return Err(invalid(format!("duplicate entry for frame {frame}, id {id}")));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// `(frame, id, box)` in frame-then-id order.
    pub fn iter(&self) -> impl Iterator<Item = (u64, u64, &BBox<T>)> {
        self.entries.iter().map(|((f, i), b)| (*f, *i, b))
    }

    pub fn ids(&self) -> BTreeSet<u64> {
        self.entries.keys().map(|(_, id)| *id).collect()
    }

    fn by_frame(&self) -> BTreeMap<u64, Vec<(u64, BBox<T>)>> {
        let mut out: BTreeMap<u64, Vec<(u64, BBox<T>)>> = BTreeMap::new();
        for ((f, id), b) in &self.entries {
            out.entry(*f).or_default().push((*id, *b));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ClearCounts {
    pub mota: f64,
    pub fp: usize,
    pub fn_: usize,
    pub id_switches: usize,
    pub mt: usize,
    pub ml: usize,
    pub matches: usize,
    pub num_gt: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MetricsReport {
    pub mota: f64,
    pub idf1: f64,
    pub fp: usize,
    pub fn_: usize,
    pub id_switches: usize,
    pub mt: usize,
    pub ml: usize,
    pub num_gt: usize,
}

impl MetricsReport {
    /// `name value` lines in a fixed order.
    pub fn table(&self) -> String {
        format!(
            "MOTA {:.6}\nIDF1 {:.6}\nFP {}\nFN {}\nIDs {}\nMT {}\nML {}\n",
            self.mota, self.idf1, self.fp, self.fn_, self.id_switches, self.mt, self.ml
        )
    }
}

fn check_gate<T: Real>(gate: T) -> Result<()> {
    if gate > T::zero() && gate < T::one() {
        Ok(())
    } else {
        Err(invalid(format!("iou_gate must lie in (0, 1), got {gate}")))
    }
}

/// Frame-by-frame CLEAR matching. Pairings from earlier frames are kept while
/// their IoU stays at or above the gate; the rest are assigned optimally.
pub fn clear_metrics<T: Real>(gt: &TrajectorySet<T>, pred: &TrajectorySet<T>, iou_gate: T) -> Result<ClearCounts> {
    check_gate(iou_gate)?;
    if gt.is_empty() {
        return Err(invalid("ground truth is empty"));
    }
    let gt_frames = gt.by_frame();
    let pred_frames = pred.by_frame();
    let frames: BTreeSet<u64> = gt_frames.keys().chain(pred_frames.keys()).copied().collect();

    let mut last_match: HashMap<u64, u64> = HashMap::new();
    let mut span: BTreeMap<u64, usize> = BTreeMap::new();
    let mut tracked: HashMap<u64, usize> = HashMap::new();
    let mut c = ClearCounts {
        num_gt: gt.len(),
        ..ClearCounts::default()
    };
    let empty = Vec::new();

    for f in frames {
        let g = gt_frames.get(&f).unwrap_or(&empty);
        let p = pred_frames.get(&f).unwrap_or(&empty);
        for (id, _) in g {
            *span.entry(*id).or_default() += 1;
        }
        let mut g_used = vec![false; g.len()];
        let mut p_used = vec![false; p.len()];
        let mut pairs: Vec<(usize, usize)> = Vec::new();

        for (gi, (gid, gb)) in g.iter().enumerate() {
            let Some(pid) = last_match.get(gid) else { continue };
            if let Some(pi) = p.iter().position(|(id, _)| id == pid) {
                if !p_used[pi] && iou(gb, &p[pi].1) >= iou_gate {
                    g_used[gi] = true;
                    p_used[pi] = true;
                    pairs.push((gi, pi));
                }
            }
        }

        let rest_g: Vec<usize> = (0..g.len()).filter(|i| !g_used[*i]).collect();
        let rest_p: Vec<usize> = (0..p.len()).filter(|i| !p_used[*i]).collect();
        let cost: Vec<Vec<T>> = rest_g
            .iter()
            .map(|&gi| rest_p.iter().map(|&pi| T::one() - iou(&g[gi].1, &p[pi].1)).collect())
            .collect();
        let m = linear_assignment(&cost, T::one() - iou_gate)?;
        for (r, col) in m.matches {
            let (gi, pi) = (rest_g[r], rest_p[col]);
            // Guard against rounding in 1 − IoU letting a sub-gate pair through.
            if iou(&g[gi].1, &p[pi].1) < iou_gate {
                continue;
            }
            g_used[gi] = true;
            p_used[pi] = true;
            pairs.push((gi, pi));
        }

        for (gi, pi) in pairs {
            let (gid, pid) = (g[gi].0, p[pi].0);
            if let Some(prev) = last_match.insert(gid, pid) {
                if prev != pid {
                    c.id_switches += 1;
                }
            }
            *tracked.entry(gid).or_default() += 1;
            c.matches += 1;
        }
        c.fn_ += g_used.iter().filter(|u| !**u).count();
        c.fp += p_used.iter().filter(|u| !**u).count();
    }

    for (id, s) in &span {
        let ratio = tracked.get(id).copied().unwrap_or(0) as f64 / *s as f64;
        if ratio >= 0.8 {
            c.mt += 1;
        }
        if ratio <= 0.2 {
            c.ml += 1;
        }
    }
    c.mota = 1.0 - (c.fp + c.fn_ + c.id_switches) as f64 / c.num_gt as f64;
    Ok(c)
}

/// Frames in which each (gt id, pred id) pair overlaps by at least the gate.
pub fn identity_overlaps<T: Real>(
    gt: &TrajectorySet<T>,
    pred: &TrajectorySet<T>,
    iou_gate: T,
) -> (Vec<u64>, Vec<u64>, Vec<Vec<usize>>) {
    let gt_ids: Vec<u64> = gt.ids().into_iter().collect();
    let pred_ids: Vec<u64> = pred.ids().into_iter().collect();
    let gi: HashMap<u64, usize> = gt_ids.iter().enumerate().map(|(i, id)| (*id, i)).collect();
    let pi: HashMap<u64, usize> = pred_ids.iter().enumerate().map(|(i, id)| (*id, i)).collect();
    let mut counts = vec![vec![0usize; pred_ids.len()]; gt_ids.len()];
    let pred_frames = pred.by_frame();
    for (f, gs) in gt.by_frame() {
        let Some(ps) = pred_frames.get(&f) else { continue };
        for (gid, gb) in &gs {
            for (pid, pb) in ps {
                if iou(gb, pb) >= iou_gate {
                    counts[gi[gid]][pi[pid]] += 1;
                }
            }
        }
    }
    (gt_ids, pred_ids, counts)
}

/// Identity F1 under the one-to-one gt/pred id matching that maximises the
/// number of identity true positives.
pub fn idf1<T: Real>(gt: &TrajectorySet<T>, pred: &TrajectorySet<T>, iou_gate: T) -> Result<f64> {
    check_gate(iou_gate)?;
    if gt.is_empty() {
        return Err(invalid("ground truth is empty"));
    }
    let (_, _, counts) = identity_overlaps(gt, pred, iou_gate);
    let idtp = if counts.first().map_or(0, Vec::len) == 0 {
        0
    } else {
        let cost: Vec<Vec<f64>> = counts.iter().map(|r| r.iter().map(|c| -(*c as f64)).collect()).collect();
        let m = linear_assignment(&cost, 0.0)?;
        m.matches.iter().map(|&(r, c)| counts[r][c]).sum::<usize>()
    };
    let idfn = gt.len() - idtp;
    let idfp = pred.len() - idtp;
    Ok(2.0 * idtp as f64 / (2 * idtp + idfp + idfn) as f64)
}

pub fn evaluate<T: Real>(gt: &TrajectorySet<T>, pred: &TrajectorySet<T>, iou_gate: T) -> Result<MetricsReport> {
    let c = clear_metrics(gt, pred, iou_gate)?;
    Ok(MetricsReport {
        mota: c.mota,
        idf1: idf1(gt, pred, iou_gate)?,
        fp: c.fp,
        fn_: c.fn_,
        id_switches: c.id_switches,
        mt: c.mt,
        ml: c.ml,
        num_gt: c.num_gt,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(x: f64, y: f64) -> BBox<f64> {
        BBox::new(x, y, x + 10.0, y + 20.0).unwrap()
    }

    #[test]
    fn perfect_tracking() {
        let gt = TrajectorySet::from_entries((1..=10).flat_map(|f| [(f, 1, b(f as f64, 0.0)), (f, 2, b(50.0, f as f64))])).unwrap();
        let r = evaluate(&gt, &gt, 0.5).unwrap();
        assert_eq!((r.mota, r.idf1, r.fp, r.fn_, r.id_switches, r.mt, r.ml), (1.0, 1.0, 0, 0, 0, 2, 0));
    }

    #[test]
    fn one_missing_frame() {
        let gt = TrajectorySet::from_entries((1..=10).map(|f| (f, 1, b(0.0, 0.0)))).unwrap();
        let pred = TrajectorySet::from_entries((1..=10).filter(|f| *f != 4).map(|f| (f, 7, b(0.0, 0.0)))).unwrap();
        let c = clear_metrics(&gt, &pred, 0.5).unwrap();
        assert_eq!((c.fn_, c.fp, c.id_switches), (1, 0, 0));
        assert!((c.mota - 0.9).abs() < 1e-12);
    }

    #[test]
    fn swapped_ids() {
        let mut gt = Vec::new();
        let mut pred = Vec::new();
        for f in 1..=10u64 {
            gt.push((f, 1, b(0.0, 0.0)));
            gt.push((f, 2, b(100.0, 0.0)));
            let (a, c) = if f <= 5 { (1, 2) } else { (2, 1) };
            pred.push((f, a, b(0.0, 0.0)));
            pred.push((f, c, b(100.0, 0.0)));
        }
        let gt = TrajectorySet::from_entries(gt).unwrap();
        let pred = TrajectorySet::from_entries(pred).unwrap();
        let c = clear_metrics(&gt, &pred, 0.5).unwrap();
        assert_eq!(c.id_switches, 2);
        assert!((c.mota - (1.0 - 2.0 / 20.0)).abs() < 1e-12);
    }

    #[test]
    fn split_identity() {
        let gt = TrajectorySet::from_entries((1..=10).map(|f| (f, 1, b(0.0, 0.0)))).unwrap();
        let pred = TrajectorySet::from_entries((1..=10).map(|f| (f, if f <= 5 { 3 } else { 4 }, b(0.0, 0.0)))).unwrap();
        // IDTP 5, IDFP 5, IDFN 5.
        assert!((idf1(&gt, &pred, 0.5).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn no_overlap_and_errors() {
        let gt = TrajectorySet::from_entries((1..=3).map(|f| (f, 1, b(0.0, 0.0)))).unwrap();
        let pred = TrajectorySet::from_entries((1..=3).map(|f| (f, 1, b(200.0, 0.0)))).unwrap();
        assert_eq!(idf1(&gt, &pred, 0.5).unwrap(), 0.0);
        assert_eq!(idf1(&gt, &TrajectorySet::new(), 0.5).unwrap(), 0.0);
        assert!(clear_metrics(&TrajectorySet::new(), &pred, 0.5).is_err());
        assert!(idf1(&gt, &pred, 1.0).is_err());
        let mut s = TrajectorySet::new();
        assert!(s.insert(0, 1, b(0.0, 0.0)).is_err());
        s.insert(1, 1, b(0.0, 0.0)).unwrap();
        assert!(s.insert(1, 1, b(0.0, 0.0)).is_err());
    }
}
