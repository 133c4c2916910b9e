//! Depth camera and self-state assembly.
//!
//! The camera is an ideal pinhole mounted level, looking along the vehicle's
//! yaw. Depth is the Euclidean distance to the first cylinder hit along each
//! pixel ray, quantized to 8-bit codes with 255 meaning at-or-beyond the
//! sensing cap `d_max`.

use serde::{Deserialize, Serialize};

use crate::vehicle::{wrap_angle, VehicleState};
use crate::world::{Cylinder, ObstacleField};

/// Quantized depth map, row-major, `h` rows of `w` codes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DepthImage {
    pub h: usize,
    pub w: usize,
    pub codes: Vec<u8>,
}

impl DepthImage {
    pub fn filled(h: usize, w: usize, code: u8) -> Self {
        DepthImage {
            h,
            w,
            codes: vec![code; h * w],
        }
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    /// Minimum depth in meters anywhere in the image.
    pub fn min_depth(&self, d_max: f64) -> f64 {
        let min_code = self.codes.iter().copied().min().unwrap_or(255);
        decode_depth(min_code, d_max)
    }
}

/// code = round(clamp(d / d_max, 0, 1) · 255)
pub fn encode_depth(d: f64, d_max: f64) -> u8 {
    ((d / d_max).clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn decode_depth(code: u8, d_max: f64) -> f64 {
    code as f64 / 255.0 * d_max
}

/// Pinhole camera: horizontal FOV fixes the focal length in pixels; rays pass
/// through pixel centers; forward is the yaw direction, pitch is level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub hfov: f64,
    pub res_h: usize,
    pub res_w: usize,
    pub d_max: f64,
}

impl Default for CameraModel {
    fn default() -> Self {
        CameraModel {
            hfov: 90.0f64.to_radians(),
            res_h: 80,
            res_w: 100,
            d_max: 20.0,
        }
    }
}

impl CameraModel {
    pub fn focal_px(&self) -> f64 {
        (self.res_w as f64 / 2.0) / (self.hfov / 2.0).tan()
    }

    /// Unit direction of the ray through pixel (row i, col j), in world
    /// coordinates for a camera at yaw `yaw`.
    pub fn ray_dir(&self, yaw: f64, i: usize, j: usize) -> [f64; 3] {
        let f = self.focal_px();
        let u = (j as f64 + 0.5) - self.res_w as f64 / 2.0; // right of axis
        let v = self.res_h as f64 / 2.0 - (i as f64 + 0.5); // above axis
        let (sy, cy) = yaw.sin_cos();
        let fwd = [cy, sy, 0.0];
        let right = [sy, -cy, 0.0];
        let up = [0.0, 0.0, 1.0];
        let mut d = [0.0; 3];
        for k in 0..3 {
            d[k] = fwd[k] + (u / f) * right[k] + (v / f) * up[k];
        }
        let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
        [d[0] / n, d[1] / n, d[2] / n]
    }
}

/// Smallest positive `t` where `origin + t·dir` meets the solid cylinder
/// (side wall or cap disks), or None. An origin inside the solid is already
/// in contact: `Some(0.0)`.
pub fn ray_cylinder_intersection(origin: [f64; 3], dir: [f64; 3], c: &Cylinder) -> Option<f64> {
    const T_MIN: f64 = 1e-9;
    let ox = origin[0] - c.cx;
    let oy = origin[1] - c.cy;
    if ox * ox + oy * oy <= c.radius * c.radius && origin[2] >= 0.0 && origin[2] <= c.height {
        return Some(0.0);
    }
    let mut best: Option<f64> = None;
    let mut consider = |t: f64| {
        if t > T_MIN && best.is_none_or(|b| t < b) {
            best = Some(t);
        }
    };
    // side wall: quadratic in the xy projection
    let a = dir[0] * dir[0] + dir[1] * dir[1];
    if a > 0.0 {
        let b = 2.0 * (ox * dir[0] + oy * dir[1]);
        let cq = ox * ox + oy * oy - c.radius * c.radius;
        let disc = b * b - 4.0 * a * cq;
        if disc >= 0.0 {
            let sq = disc.sqrt();
            for t in [(-b - sq) / (2.0 * a), (-b + sq) / (2.0 * a)] {
                let z = origin[2] + t * dir[2];
                if z >= 0.0 && z <= c.height {
                    consider(t);
                }
            }
        }
    }
    // cap disks at z = 0 and z = height
    if dir[2].abs() > 0.0 {
        for z_cap in [0.0, c.height] {
            let t = (z_cap - origin[2]) / dir[2];
            let x = ox + t * dir[0];
            let y = oy + t * dir[1];
            if x * x + y * y <= c.radius * c.radius {
                consider(t);
            }
        }
    }
    best
}

/// Depth along one ray against the whole field, capped at `d_max`.
pub fn cast_ray(field: &ObstacleField, origin: [f64; 3], dir: [f64; 3], d_max: f64) -> f64 {
    let mut best = d_max;
    for c in &field.cylinders {
        if let Some(t) = ray_cylinder_intersection(origin, dir, c) {
            if t < best {
                best = t;
            }
        }
    }
    best
}

/// Renders the full depth image for a camera at the vehicle pose.
pub fn render_depth(field: &ObstacleField, pose: &VehicleState, cam: &CameraModel) -> DepthImage {
    let mut img = DepthImage::filled(cam.res_h, cam.res_w, 255);
    let f = cam.focal_px();
    let (sy, cy) = pose.yaw.sin_cos();
    let fwd = [cy, sy, 0.0];
    let right = [sy, -cy, 0.0];
    for i in 0..cam.res_h {
        let v = cam.res_h as f64 / 2.0 - (i as f64 + 0.5);
        for j in 0..cam.res_w {
            let u = (j as f64 + 0.5) - cam.res_w as f64 / 2.0;
            let mut d = [0.0f64; 3];
            for k in 0..3 {
                d[k] = fwd[k] + (u / f) * right[k];
            }
            d[2] += v / f;
            let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
            let dir = [d[0] / n, d[1] / n, d[2] / n];
            let depth = cast_ray(field, pose.position, dir, cam.d_max);
            img.codes[i * cam.res_w + j] = encode_depth(depth, cam.d_max);
        }
    }
    img
}

/// The 8 scalar self-state quantities: vector to goal, velocity, yaw
/// deviation toward the goal bearing, yaw rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelfState {
    pub d: [f64; 3],
    pub v: [f64; 3],
    pub dpsi: f64,
    pub yaw_rate: f64,
}

pub fn make_self_state(vehicle: &VehicleState, goal: [f64; 3]) -> SelfState {
    let d = [
        goal[0] - vehicle.position[0],
        goal[1] - vehicle.position[1],
        goal[2] - vehicle.position[2],
    ];
    // bearing of the goal in the xy plane; at the goal the bearing is
    // degenerate and the deviation is defined as -yaw
    let bearing = d[1].atan2(d[0]);
    SelfState {
        d,
        v: vehicle.velocity,
        dpsi: wrap_angle(bearing - vehicle.yaw),
        yaw_rate: vehicle.yaw_rate,
    }
}

/// One observation: what a network consumes. `privileged` marks the clean
/// simulator ground truth; corrupted copies are produced by the corruption
/// pipeline and carry `privileged = false`.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub depth: DepthImage,
    pub state: SelfState,
    pub privileged: bool,
}

/// Assembles the privileged observation for the current pose.
pub fn observe(
    field: &ObstacleField,
    vehicle: &VehicleState,
    goal: [f64; 3],
    cam: &CameraModel,
) -> Observation {
    Observation {
        depth: render_depth(field, vehicle, cam),
        state: make_self_state(vehicle, goal),
        privileged: true,
    }
}

/// Binary PGM (P5) dump for eyeballing depth images.
pub fn write_pgm(img: &DepthImage, w: &mut impl std::io::Write) -> std::io::Result<()> {
    write!(w, "P5\n{} {}\n255\n", img.w, img.h)?;
    w.write_all(&img.codes)
}
