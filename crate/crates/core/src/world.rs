//! Obstacle fields: vertical cylinders scattered over a disc, plus the flight
//! bounds. The field doubles as the privileged obstacle map — exact distance
//! queries against it feed the reward and collision checks.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum WorldError {
    #[error("infeasible field spec: placed {placed} of {want} cylinders in {attempts} attempts")]
    Infeasible {
        placed: usize,
        want: usize,
        attempts: usize,
    },
    #[error("invalid field spec: {0}")]
    InvalidSpec(String),
    #[error("bad field file: {0}")]
    Parse(String),
}

/// A solid vertical cylinder standing on the ground plane (z from 0 to
/// `height`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cylinder {
    pub cx: f64,
    pub cy: f64,
    pub radius: f64,
    pub height: f64,
}

/// Closed axis-aligned flight bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub x: [f64; 2],
    pub y: [f64; 2],
    pub z: [f64; 2],
}

impl Default for Bounds {
    fn default() -> Self {
        Bounds {
            x: [-85.0, 85.0],
            y: [-85.0, 85.0],
            z: [0.2, 15.0],
        }
    }
}

impl Bounds {
    pub fn validate(&self) -> Result<(), WorldError> {
        for (name, r) in [("x", self.x), ("y", self.y), ("z", self.z)] {
            if !(r[0] <= r[1]) || !r[0].is_finite() || !r[1].is_finite() {
                return Err(WorldError::InvalidSpec(format!(
                    "{name} range [{}, {}] is empty or non-finite",
                    r[0], r[1]
                )));
            }
        }
        Ok(())
    }
}

/// Placement recipe for [`generate_field`]. Cylinders are sampled uniformly
/// over the disc of `disc_radius` about the origin, rejecting any footprint
/// that leaves the disc or comes within `clearance` of the start point or of
/// any point on the goal circle (radius `goal_ring_radius` about the start).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldSpec {
    pub count: usize,
    pub radius: f64,
    pub height: f64,
    pub disc_radius: f64,
    pub clearance: f64,
    pub start_xy: [f64; 2],
    pub goal_ring_radius: f64,
    pub bounds: Bounds,
}

impl Default for FieldSpec {
    fn default() -> Self {
        FieldSpec {
            count: 70,
            radius: 2.5,
            height: 15.0,
            disc_radius: 60.0,
            clearance: 5.0,
            start_xy: [0.0, 0.0],
            goal_ring_radius: 65.0,
            bounds: Bounds::default(),
        }
    }
}

impl FieldSpec {
    pub fn validate(&self) -> Result<(), WorldError> {
        if self.radius <= 0.0 || self.height <= 0.0 {
            return Err(WorldError::InvalidSpec("cylinder dims must be positive".into()));
        }
        if self.disc_radius <= 0.0 {
            return Err(WorldError::InvalidSpec("disc radius must be positive".into()));
        }
        if self.clearance < 0.0 {
            return Err(WorldError::InvalidSpec("clearance must be non-negative".into()));
        }
        self.bounds.validate()
    }
}

/// The world: bounds plus the cylinder set generated from `seed`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObstacleField {
    pub cylinders: Vec<Cylinder>,
    pub bounds: Bounds,
    pub seed: u64,
}

/// Rejection-samples `spec.count` cylinder centers uniformly over the disc.
/// Deterministic in (seed, spec). Fails after a bounded attempt budget when
/// the clearance constraints leave too little room.
pub fn generate_field(seed: u64, spec: &FieldSpec) -> Result<ObstacleField, WorldError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cylinders = Vec::with_capacity(spec.count);
    let budget = 1000 * spec.count.max(1);
    let mut attempts = 0;
    while cylinders.len() < spec.count {
        if attempts >= budget {
            return Err(WorldError::Infeasible {
                placed: cylinders.len(),
                want: spec.count,
                attempts,
            });
        }
        attempts += 1;
        // uniform over the disc: radius via sqrt, then angle
        let r = spec.disc_radius * rng.random::<f64>().sqrt();
        let theta = 2.0 * std::f64::consts::PI * rng.random::<f64>();
        let (cx, cy) = (r * theta.cos(), r * theta.sin());
        if r + spec.radius > spec.disc_radius {
            continue; // footprint pokes out of the disc
        }
        let to_start = ((cx - spec.start_xy[0]).powi(2) + (cy - spec.start_xy[1]).powi(2)).sqrt();
        if to_start < spec.radius + spec.clearance {
            continue; // blocks the start
        }
        // distance from the center to the goal circle (a ring about the start)
        let to_ring = (to_start - spec.goal_ring_radius).abs();
        if to_ring < spec.radius + spec.clearance {
            continue; // blocks some goal position
        }
        cylinders.push(Cylinder {
            cx,
            cy,
            radius: spec.radius,
            height: spec.height,
        });
    }
    Ok(ObstacleField {
        cylinders,
        bounds: spec.bounds,
        seed,
    })
}

/// Distance from `p` to the surface of one solid cylinder. Positive inside
/// too (distance to the nearest wall or cap), which never matters in flight:
/// the collision shell is triggered well before the wall.
fn distance_to_cylinder(c: &Cylinder, p: [f64; 3]) -> f64 {
    let dxy = ((p[0] - c.cx).powi(2) + (p[1] - c.cy).powi(2)).sqrt();
    let dz_excess = if p[2] < 0.0 {
        -p[2]
    } else if p[2] > c.height {
        p[2] - c.height
    } else {
        0.0
    };
    // side wall (radius exactly r, z clamped to [0, height])
    let wall = ((dxy - c.radius).powi(2) + dz_excess.powi(2)).sqrt();
    // cap disks (filled): straight up/down when inside the footprint
    let radial_excess = (dxy - c.radius).max(0.0);
    let top = (radial_excess.powi(2) + (p[2] - c.height).powi(2)).sqrt();
    let bottom = (radial_excess.powi(2) + p[2].powi(2)).sqrt();
    wall.min(top).min(bottom)
}

/// Exact distance from `p` to the nearest cylinder surface, capped at `cap`
/// (the sensing range). An empty field reports the cap.
pub fn distance_to_nearest_obstacle(field: &ObstacleField, p: [f64; 3], cap: f64) -> f64 {
    let mut best = cap;
    for c in &field.cylinders {
        let d = distance_to_cylinder(c, p);
        if d < best {
            best = d;
        }
    }
    best
}

/// Componentwise closed-interval containment.
pub fn in_bounds(bounds: &Bounds, p: [f64; 3]) -> bool {
    p[0] >= bounds.x[0]
        && p[0] <= bounds.x[1]
        && p[1] >= bounds.y[0]
        && p[1] <= bounds.y[1]
        && p[2] >= bounds.z[0]
        && p[2] <= bounds.z[1]
}

/// Plain-text field format: `bounds x0 x1 y0 y1 z0 z1` then one `cx cy r h`
/// line per cylinder.
pub fn field_to_text(field: &ObstacleField) -> String {
    let mut s = format!(
        "bounds {} {} {} {} {} {}\n",
        field.bounds.x[0],
        field.bounds.x[1],
        field.bounds.y[0],
        field.bounds.y[1],
        field.bounds.z[0],
        field.bounds.z[1]
    );
    for c in &field.cylinders {
        s.push_str(&format!("{} {} {} {}\n", c.cx, c.cy, c.radius, c.height));
    }
    s
}

pub fn field_from_text(text: &str) -> Result<ObstacleField, WorldError> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines
        .next()
        .ok_or_else(|| WorldError::Parse("empty field file".into()))?;
    let toks: Vec<&str> = header.split_whitespace().collect();
    if toks.len() != 7 || toks[0] != "bounds" {
        return Err(WorldError::Parse(format!("bad header line: {header:?}")));
    }
    let num = |s: &str| -> Result<f64, WorldError> {
        s.parse::<f64>()
            .map_err(|_| WorldError::Parse(format!("bad number {s:?}")))
    };
    let bounds = Bounds {
        x: [num(toks[1])?, num(toks[2])?],
        y: [num(toks[3])?, num(toks[4])?],
        z: [num(toks[5])?, num(toks[6])?],
    };
    bounds.validate()?;
    let mut cylinders = Vec::new();
    for line in lines {
        let t: Vec<&str> = line.split_whitespace().collect();
        if t.len() != 4 {
            return Err(WorldError::Parse(format!("bad cylinder line: {line:?}")));
        }
        let c = Cylinder {
            cx: num(t[0])?,
            cy: num(t[1])?,
            radius: num(t[2])?,
            height: num(t[3])?,
        };
        if c.radius <= 0.0 || c.height <= 0.0 {
            return Err(WorldError::Parse(format!("non-positive cylinder dims: {line:?}")));
        }
        cylinders.push(c);
    }
    Ok(ObstacleField {
        cylinders,
        bounds,
        seed: 0,
    })
}
