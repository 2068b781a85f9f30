//! Synthetic scenes with exact ground truth: a pitched camera above a
//! textured ground plane, with upright textured billboards walking on it.
//!
//! World frame: ground is `Z = 0`, `Z` up; the initial camera sits at
//! `(0, 0, camera_height)` looking along `+Y`, pitched down. Billboards are
//! rectangles in a plane `Y = const`, spanning `x ± width/2` and `Z ∈ [0, height]`.
//! Everything here is `f64`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::association::Detection;
use crate::error::{invalid, Result};
use crate::geometry::{mat_mul, mat_vec, pose_to_transform, transpose, CameraIntrinsics, DepthRange, Mat3, Pose6DoF};
use crate::imaging::{DepthGrid, ImageGrid};
use crate::motion::BBox;

/// Intensity of rays that hit nothing.
pub const SKY: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Turn {
    pub frame: usize,
    pub vx: f64,
    pub vy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObjectSpec {
    pub spawn: usize,
    /// First frame at which the object is gone.
    pub despawn: Option<usize>,
    /// Ground position at the spawn frame.
    pub x: f64,
    pub y: f64,
    /// Ground displacement per frame.
    pub vx: f64,
    pub vy: f64,
    pub width: f64,
    pub height: f64,
    /// Velocity changes; each applies from its frame onward.
    pub turns: Vec<Turn>,
}

impl Default for ObjectSpec {
    fn default() -> Self {
        Self {
            spawn: 0,
            despawn: None,
            x: 0.0,
            y: 6.0,
            vx: 0.0,
            vy: 0.0,
            width: 0.6,
            height: 1.7,
            turns: Vec::new(),
        }
    }
}

/// Extra camera motion added to the steady per-frame motion at one frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Jerk {
    pub frame: usize,
    /// `[θx, θy, θz, tx, ty, tz]`, same convention as the frame poses.
    pub pose: [f64; 6],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    pub fx: f64,
    pub fy: f64,
    /// Principal point; the image centre when absent.
    pub cx: Option<f64>,
    pub cy: Option<f64>,
    pub camera_height: f64,
    pub pitch_deg: f64,
    pub frames: usize,
    pub seed: u64,
    /// Size of the coarsest ground-texture feature, world units.
    pub texture_scale: f64,
    /// Sub-samples per pixel side when shading.
    pub supersample: usize,
    /// Camera motion between consecutive frames, `[θx, θy, θz, tx, ty, tz]`.
    pub motion: [f64; 6],
    pub jerks: Vec<Jerk>,
    pub objects: Vec<ObjectSpec>,
    pub d_min: f64,
    pub d_max: f64,
    /// Uniform jitter in pixels applied to each detection coordinate.
    pub detection_noise: f64,
    pub detection_confidence: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            width: 256,
            height: 160,
            fx: 200.0,
            fy: 200.0,
            cx: None,
            cy: None,
            camera_height: 3.0,
            pitch_deg: 45.0,
            frames: 30,
            seed: 7,
            texture_scale: 0.5,
            supersample: 2,
            motion: [0.0; 6],
            jerks: Vec::new(),
            objects: Vec::new(),
            d_min: 0.1,
            d_max: 100.0,
            detection_noise: 0.0,
            detection_confidence: 0.9,
        }
    }
}

impl SceneSpec {
    pub fn intrinsics(&self) -> CameraIntrinsics<f64> {
        CameraIntrinsics {
            fx: self.fx,
            fy: self.fy,
            cx: self.cx.unwrap_or((self.width as f64 - 1.0) / 2.0),
            cy: self.cy.unwrap_or((self.height as f64 - 1.0) / 2.0),
        }
    }

    pub fn range(&self) -> DepthRange<f64> {
        DepthRange {
            d_min: self.d_min,
            d_max: self.d_max,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width < 8 || self.height < 8 {
            return Err(invalid("scene must be at least 8x8 pixels"));
        }
        self.intrinsics().validate()?;
        self.range().validate()?;
        if !(self.camera_height > 0.0 && self.camera_height.is_finite()) {
            return Err(invalid("camera_height must be positive"));
        }
        if !(self.pitch_deg > 0.0 && self.pitch_deg < 90.0) {
            return Err(invalid("pitch_deg must lie in (0, 90)"));
        }
        if self.frames < 2 {
            return Err(invalid("a scene needs at least 2 frames"));
        }
        if !(self.texture_scale > 0.0 && self.texture_scale.is_finite()) {
            return Err(invalid("texture_scale must be positive"));
        }
        if !(1..=4).contains(&self.supersample) {
            return Err(invalid("supersample must lie in 1..=4"));
        }
        if self.motion.iter().any(|v| !v.is_finite()) {
            return Err(invalid("motion must be finite"));
        }
        for j in &self.jerks {
            if j.frame < 1 || j.frame >= self.frames || j.pose.iter().any(|v| !v.is_finite()) {
                return Err(invalid(format!("jerk at frame {} is out of range or not finite", j.frame)));
            }
        }
        for (i, o) in self.objects.iter().enumerate() {
            if !(o.width > 0.0 && o.height > 0.0) {
                return Err(invalid(format!("object {i} needs a positive footprint")));
            }
            if o.spawn >= self.frames || o.despawn.is_some_and(|d| d <= o.spawn) {
                return Err(invalid(format!("object {i} has an empty lifetime")));
            }
            let finite = [o.x, o.y, o.vx, o.vy].iter().all(|v| v.is_finite())
                && o.turns.iter().all(|t| t.vx.is_finite() && t.vy.is_finite());
            if !finite {
                return Err(invalid(format!("object {i} has non-finite motion")));
            }
        }
        if !(self.detection_noise >= 0.0 && self.detection_noise.is_finite()) {
            return Err(invalid("detection_noise must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.detection_confidence) {
            return Err(invalid("detection_confidence must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Built-in scenes.
///
/// * `walk`: a few pedestrians under a slowly advancing camera.
/// * `crossing`: a near and a far object meet with overlapping boxes, then
///   head back the way they came.
/// * `jerk`: a static camera that yaws abruptly at several frames.
/// * `plane`: empty ground, two frames.
pub fn preset(name: &str) -> Result<SceneSpec> {
    let base = SceneSpec::default();
    let spec = match name {
        "walk" => SceneSpec {
            frames: 40,
            pitch_deg: 30.0,
            motion: [0.0, 0.0, 0.0, 0.0, 0.0, -0.03],
            objects: vec![
                ObjectSpec { x: -1.5, y: 6.0, vx: 0.03, ..ObjectSpec::default() },
                ObjectSpec { x: 1.5, y: 7.5, vx: -0.025, ..ObjectSpec::default() },
                ObjectSpec { x: 0.0, y: 9.0, vy: 0.02, spawn: 5, ..ObjectSpec::default() },
            ],
            ..base
        },
        "crossing" => crossing_spec(),
        "jerk" => jerk_spec(),
        "plane" => SceneSpec { frames: 2, ..base },
        _ => return Err(invalid(format!("unknown scene preset {name:?}"))),
    };
    spec.validate()?;
    Ok(spec)
}

pub const PRESETS: [&str; 4] = ["walk", "crossing", "jerk", "plane"];

fn crossing_spec() -> SceneSpec {
    let meet = 14;
    let speed = 0.16;
    // Image-space gap between the two boxes at the turn. Small enough that
    // the boxes overlap heavily, wide enough that the far object's feet stay
    // partly visible beside the near one.
    let gap = 0.03;
    let (near_y, far_y) = (6.0, 8.0);
    // The far object moves faster in world units so both cross the image at
    // the same pixel speed.
    let scale = far_y / near_y;
    let near = ObjectSpec {
        x: -speed * meet as f64 - gap,
        y: near_y,
        vx: speed,
        width: 0.8,
        height: 1.7,
        turns: vec![Turn { frame: meet + 1, vx: -speed, vy: 0.0 }],
        ..ObjectSpec::default()
    };
    let far = ObjectSpec {
        x: (speed * meet as f64 + gap) * scale,
        y: far_y,
        vx: -speed * scale,
        width: 1.0,
        height: 2.2,
        turns: vec![Turn { frame: meet + 1, vx: speed * scale, vy: 0.0 }],
        ..ObjectSpec::default()
    };
    SceneSpec {
        camera_height: 1.6,
        pitch_deg: 12.0,
        frames: 2 * meet + 1,
        objects: vec![near, far],
        ..SceneSpec::default()
    }
}

pub const JERK_FRAMES: [usize; 4] = [6, 12, 18, 24];

fn jerk_spec() -> SceneSpec {
    let yaw = 6f64.to_radians();
    let jerks = JERK_FRAMES
        .iter()
        .enumerate()
        .map(|(i, &frame)| Jerk {
            frame,
            pose: [0.0, if i % 2 == 0 { yaw } else { -yaw }, 0.0, 0.0, 0.0, 0.0],
        })
        .collect();
    let walker = |x: f64, y: f64, vx: f64| ObjectSpec { x, y, vx, width: 0.5, height: 1.7, ..ObjectSpec::default() };
    SceneSpec {
        frames: 30,
        pitch_deg: 30.0,
        jerks,
        objects: vec![
            walker(-1.6, 6.0, 0.02),
            walker(-0.6, 6.5, -0.015),
            walker(0.6, 7.0, 0.02),
            walker(1.6, 5.5, -0.02),
        ],
        ..SceneSpec::default()
    }
}

/// Camera-to-world rotation and centre.
#[derive(Debug, Clone, Copy, PartialEq)]
struct CameraFrame {
    a: Mat3<f64>,
    c: [f64; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    spec: SceneSpec,
    seed: u64,
    cameras: Vec<CameraFrame>,
    poses: Vec<Pose6DoF<f64>>,
    /// Ground position of every object at every frame, `None` when absent.
    positions: Vec<Vec<Option<[f64; 2]>>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneFrame {
    pub image: ImageGrid<f64>,
    /// Disparity under the scene's depth range; 0 where nothing is hit.
    pub depth: DepthGrid<f64>,
    /// Camera motion from the previous frame; zero for frame 0.
    pub pose: Pose6DoF<f64>,
    pub gt_boxes: Vec<(u64, BBox<f64>)>,
}

impl SceneFrame {
    /// The ground-truth boxes, jittered by the scene's detection noise.
    pub fn detections(&self, scene: &Scene, t: usize) -> Vec<Detection<f64>> {
        let noise = scene.spec.detection_noise;
        let conf = scene.spec.detection_confidence;
        self.gt_boxes
            .iter()
            .filter_map(|(id, b)| {
                let jitter = |k: u64| {
                    if noise == 0.0 {
                        0.0
                    } else {
                        noise * (2.0 * unit_hash(t as i64, *id as i64, scene.seed ^ (0xD37 + k)) - 1.0)
                    }
                };
                let x0 = b.x0 + jitter(0);
                let y0 = b.y0 + jitter(1);
                let x1 = (b.x1 + jitter(2)).max(x0 + 1.0);
                let y1 = (b.y1 + jitter(3)).max(y0 + 1.0);
                Detection::new(BBox::new(x0, y0, x1, y1).ok()?, conf).ok()
            })
            .collect()
    }
}

/// Precomputes camera and object trajectories. Rendering uses `seed` for the
/// textures in place of `spec.seed`.
pub fn build_scene(spec: &SceneSpec, seed: u64) -> Result<Scene> {
    spec.validate()?;
    let phi = spec.pitch_deg.to_radians();
    let (s, c) = phi.sin_cos();
    let mut cam = CameraFrame {
        a: [[1.0, 0.0, 0.0], [0.0, -s, c], [0.0, -c, -s]],
        c: [0.0, 0.0, spec.camera_height],
    };
    let mut cameras = vec![cam];
    let mut poses = vec![Pose6DoF::zero()];
    for t in 1..spec.frames {
        let mut p = spec.motion;
        for j in spec.jerks.iter().filter(|j| j.frame == t) {
            for (a, b) in p.iter_mut().zip(j.pose) {
                *a += b;
            }
        }
        let pose = Pose6DoF::from_array(p);
        let rel = pose_to_transform(&pose)?;
        // x_t = R·x_{t−1} + τ, so the camera-to-world map picks up Rᵀ.
        let a = mat_mul(&cam.a, &transpose(&rel.r));
        let moved = mat_vec(&a, rel.tau);
        cam = CameraFrame {
            a,
            c: [cam.c[0] - moved[0], cam.c[1] - moved[1], cam.c[2] - moved[2]],
        };
        cameras.push(cam);
        poses.push(pose);
    }

    let positions = (0..spec.frames)
        .map(|t| spec.objects.iter().map(|o| object_position(o, t)).collect())
        .collect();
    Ok(Scene {
        spec: spec.clone(),
        seed,
        cameras,
        poses,
        positions,
    })
}

fn object_position(o: &ObjectSpec, t: usize) -> Option<[f64; 2]> {
    if t < o.spawn || o.despawn.is_some_and(|d| t >= d) {
        return None;
    }
    let (mut x, mut y) = (o.x, o.y);
    let (mut vx, mut vy) = (o.vx, o.vy);
    for step in (o.spawn + 1)..=t {
        if let Some(turn) = o.turns.iter().rev().find(|turn| turn.frame == step) {
            vx = turn.vx;
            vy = turn.vy;
        }
        x += vx;
        y += vy;
    }
    Some([x, y])
}

impl Scene {
    pub fn spec(&self) -> &SceneSpec {
        &self.spec
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn frame_count(&self) -> usize {
        self.spec.frames
    }

    pub fn intrinsics(&self) -> CameraIntrinsics<f64> {
        self.spec.intrinsics()
    }

    pub fn pose(&self, t: usize) -> Option<&Pose6DoF<f64>> {
        self.poses.get(t)
    }

    /// Camera centre in world coordinates.
    pub fn camera_center(&self, t: usize) -> Option<[f64; 3]> {
        self.cameras.get(t).map(|c| c.c)
    }

    /// World point into frame `t`'s camera coordinates.
    pub fn world_to_camera(&self, t: usize, p: [f64; 3]) -> Option<[f64; 3]> {
        let cam = self.cameras.get(t)?;
        Some(mat_vec(&transpose(&cam.a), [p[0] - cam.c[0], p[1] - cam.c[1], p[2] - cam.c[2]]))
    }

    /// Ground position of object `index` at frame `t`.
    pub fn object_position(&self, t: usize, index: usize) -> Option<[f64; 2]> {
        self.positions.get(t)?.get(index).copied().flatten()
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn unit_hash(ix: i64, iy: i64, seed: u64) -> f64 {
    let h = splitmix(splitmix(seed ^ (ix as u64).wrapping_mul(0x517C_C1B7_2722_0A95)) ^ (iy as u64));
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn smooth(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

fn value_noise(x: f64, y: f64, seed: u64) -> f64 {
    let (fx, fy) = (x.floor(), y.floor());
    let (ix, iy) = (fx as i64, fy as i64);
    let (sx, sy) = (smooth(x - fx), smooth(y - fy));
    let v00 = unit_hash(ix, iy, seed);
    let v10 = unit_hash(ix + 1, iy, seed);
    let v01 = unit_hash(ix, iy + 1, seed);
    let v11 = unit_hash(ix + 1, iy + 1, seed);
    let top = v00 + (v10 - v00) * sx;
    let bottom = v01 + (v11 - v01) * sx;
    top + (bottom - top) * sy
}

/// Three octaves of value noise mapped into `[0.1, 0.9]`.
fn texture(x: f64, y: f64, scale: f64, seed: u64) -> f64 {
    let mut sum = 0.0;
    let mut amp = 1.0;
    let mut freq = 1.0 / scale;
    for octave in 0..3u64 {
        sum += amp * value_noise(x * freq, y * freq, seed.wrapping_add(octave));
        amp *= 0.5;
        freq *= 2.0;
    }
    0.1 + 0.8 * sum / 1.75
}

#[derive(Debug, Clone, Copy)]
struct Billboard {
    id: u64,
    x0: f64,
    x1: f64,
    y: f64,
    h: f64,
    cx: f64,
}

enum Hit {
    Ground([f64; 3]),
    Object(usize, [f64; 3]),
}

fn trace(origin: [f64; 3], dir: [f64; 3], boards: &[Billboard]) -> Option<(f64, Hit)> {
    let mut best: Option<(f64, Hit)> = None;
    if dir[2] < 0.0 && origin[2] > 0.0 {
        let s = -origin[2] / dir[2];
        let p = [origin[0] + s * dir[0], origin[1] + s * dir[1], 0.0];
        best = Some((s, Hit::Ground(p)));
    }
    for (i, b) in boards.iter().enumerate() {
        if dir[1] == 0.0 {
            continue;
        }
        let s = (b.y - origin[1]) / dir[1];
        if s <= 1e-9 || best.as_ref().is_some_and(|(bs, _)| s >= *bs) {
            continue;
        }
        let x = origin[0] + s * dir[0];
        let z = origin[2] + s * dir[2];
        if x >= b.x0 && x <= b.x1 && (0.0..=b.h).contains(&z) {
            best = Some((s, Hit::Object(i, [x, b.y, z])));
        }
    }
    best
}

/// Renders frame `t`.
pub fn render(scene: &Scene, t: usize) -> Result<SceneFrame> {
    let spec = &scene.spec;
    if t >= spec.frames {
        return Err(invalid(format!("frame {t} out of range 0..{}", spec.frames)));
    }
    let k = spec.intrinsics();
    let range = spec.range();
    let cam = scene.cameras[t];
    let boards: Vec<Billboard> = spec
        .objects
        .iter()
        .enumerate()
        .filter_map(|(i, o)| {
            let [x, y] = scene.positions[t][i]?;
            Some(Billboard {
                id: i as u64 + 1,
                x0: x - o.width / 2.0,
                x1: x + o.width / 2.0,
                y,
                h: o.height,
                cx: x,
            })
        })
        .collect();

    let (w, h) = (spec.width, spec.height);
    let n = spec.supersample;
    let offsets: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) / n as f64 - 0.5).collect();
    let seed = scene.seed;
    let scale = spec.texture_scale;
    let shade = |hit: &Hit| match hit {
        Hit::Ground(p) => texture(p[0], p[1], scale, seed),
        Hit::Object(i, p) => {
            let b = &boards[*i];
            texture(p[0] - b.cx, p[2], 0.25, seed ^ b.id.wrapping_mul(0xA24B_AED4_963E_E407))
        }
    };
    let ray = |u: f64, v: f64| mat_vec(&cam.a, k.backproject(u, v));

    let rows: Vec<(Vec<f64>, Vec<f64>)> = (0..h)
        .into_par_iter()
        .map(|y| {
            let mut img = Vec::with_capacity(w);
            let mut disp = Vec::with_capacity(w);
            for x in 0..w {
                let (u, v) = (x as f64, y as f64);
                // The ray has unit camera-z, so the hit parameter is the depth.
                disp.push(match trace(cam.c, ray(u, v), &boards) {
                    Some((s, _)) => range.to_disparity(s),
                    None => 0.0,
                });
                let mut acc = 0.0;
                for oy in &offsets {
                    for ox in &offsets {
                        acc += match trace(cam.c, ray(u + ox, v + oy), &boards) {
                            Some((_, hit)) => shade(&hit),
                            None => SKY,
                        };
                    }
                }
                img.push(acc / (n * n) as f64);
            }
            (img, disp)
        })
        .collect();
    let mut image = Vec::with_capacity(w * h);
    let mut depth = Vec::with_capacity(w * h);
    for (i, d) in rows {
        image.extend(i);
        depth.extend(d);
    }

    let mut gt_boxes = Vec::new();
    for b in &boards {
        if let Some(bbox) = project_billboard(scene, t, b, &k) {
            gt_boxes.push((b.id, bbox));
        }
    }

    Ok(SceneFrame {
        image: ImageGrid::new(w, h, image)?,
        depth: DepthGrid::new(w, h, depth)?,
        pose: scene.poses[t],
        gt_boxes,
    })
}

fn project_billboard(scene: &Scene, t: usize, b: &Billboard, k: &CameraIntrinsics<f64>) -> Option<BBox<f64>> {
    let corners = [[b.x0, b.y, 0.0], [b.x1, b.y, 0.0], [b.x0, b.y, b.h], [b.x1, b.y, b.h]];
    let (mut u0, mut v0, mut u1, mut v1) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in corners {
        let c = scene.world_to_camera(t, p)?;
        if c[2] <= 1e-6 {
            return None;
        }
        let (u, v) = k.project(c);
        u0 = u0.min(u);
        v0 = v0.min(v);
        u1 = u1.max(u);
        v1 = v1.max(v);
    }
    let (wmax, hmax) = ((scene.spec.width - 1) as f64, (scene.spec.height - 1) as f64);
    let (x0, y0, x1, y1) = (u0.max(0.0), v0.max(0.0), u1.min(wmax), v1.min(hmax));
    if x1 - x0 < 1.0 || y1 - y0 < 1.0 {
        return None;
    }
    BBox::new(x0, y0, x1, y1).ok()
}
